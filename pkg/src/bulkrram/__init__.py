"""Bulk-switching RRAM compute-in-memory simulation toolkit.

Modules:

* ``device``   - calibrated behavioral cell model and pulse schemes
* ``ivfit``    - conduction-regime fits (tunneling, SCLC, trap density)
* ``xbar``     - differential crossbar, programming, voltage-sensing MVM
* ``nodal``    - sparse parasitic-network solver, margin analyses
* ``snn``      - spiking-network runtime, sensor coding, backends
* ``neuroevo`` - evolutionary training of network genomes
* ``raceway``  - tracks, LIDAR, kinematic car, racing episodes
* ``cli``      - the ``bulkrram`` experiment driver
"""

__version__ = "0.1.0"
