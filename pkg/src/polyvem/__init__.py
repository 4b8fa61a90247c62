"""Virtual element solvers on general polygonal meshes.

Subpackages cover polygonal mesh generation and checking, scaled monomial
bases with polygon quadrature, sparse assembly and Newton drivers, and
conforming virtual element discretizations: H1 spaces of arbitrary order,
H^p spaces for the polyharmonic equation (p = 1, 2), a C1 quadratic space
driving a Cahn-Hilliard integrator, and a leap-frog elastodynamics solver.
"""

__version__ = "0.1.0"
