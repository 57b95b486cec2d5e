"""Tour of the exact twist mechanisms.

Builds each lattice family, certifies counter-rotation mechanisms across
the admissible twist range, and shows that the macroscopic deformation
is an isotropic compression: lambda(theta) = cos(theta) * identity for
the two built-ins, and sigma1 = sigma2 <= 1 for every variant.
"""

import numpy as np

from latmech.lattice import build_kagome, build_rotating_squares, build_variant
from latmech.mechanisms import twist_admissible_range, twist_mechanism

SPECS = [
    build_kagome(),
    build_rotating_squares(),
    build_variant("isosceles-kagome", apex=1.2, size_ratio=0.8),
    build_variant("rhombus-squares", angle=1.3, size_ratio=0.6),
]

for spec in SPECS:
    lo, hi = twist_admissible_range(spec, probe_step=0.05)
    print(f"\n{spec.name}: admissible twist range ({lo:+.3f}, {hi:+.3f})")
    print(f"  {'theta':>7} {'energy':>10} {'residual':>10} {'sigma1':>9} "
          f"{'sigma2':>9} {'cos(theta)':>11}")
    for theta in np.linspace(0.0, hi, 6):
        cert = twist_mechanism(spec, float(theta)).certificate
        print(f"  {theta:7.3f} {cert.energy:10.2e} "
              f"{cert.max_spring_residual:10.2e} {cert.sigma1:9.6f} "
              f"{cert.sigma2:9.6f} {np.cos(theta):11.6f}")
        assert cert.energy <= 1e-12 and cert.isotropy_defect <= 1e-8

print("\nEvery twist is an exact zero of the averaged energy, and every")
print("macroscopic matrix is a uniform compression: soft modes of these")
print("lattices shrink equally in all directions.")
