"""beamlab: geodesic beam transforms and semilinear boundary-data inversion.

Library layout:

- ``geometry``  -- product charts, geodesics, parallel frames, Fermi tubes
- ``jacobi``    -- complex Jacobi / Riccati fields along geodesics
- ``raytransform`` -- weighted ray transforms and their local inversion
- ``cylinder``  -- conjugated right inverse on the extended cylinder
- ``cgo``       -- Gaussian beam quasimodes and exponential solutions
- ``pde``       -- discretized direct problem, DN map, linearization cascade
- ``recon``     -- end-to-end recovery of the nonlinearity coefficients
- ``cli``       -- batch experiment driver
"""

__version__ = "0.1.0"
