"""Numerical laboratory for low Mach number limits of isentropic Euler flows.

Subpackage map:

* ``states``    -- fluid state types, physical parameters, lifting maps
* ``measures``  -- atomic Young measures on spacetime grids
* ``operator``  -- the relaxed (linearized) Euler operator and its wave cone
* ``jensen``    -- Jensen-condition tests and quasiconvex envelope estimators
* ``solver``    -- explicit finite-volume solver for compressible Euler on the torus
* ``ladder``    -- Mach-ladder orchestration and limit diagnostics
* ``cli``       -- command line front end
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
SNAPSHOT_VERSION = 1
