"""Mixed quantum-classical nonadiabatic dynamics with exact-factorization corrections.

The package provides model Hamiltonians (Shin-Metiu, cavity-dressed
Shin-Metiu, linear vibronic coupling), the family of trajectory methods
built from Ehrenfest / surface-hopping nuclei combined with quantum-momentum
corrections to the electronic equation (Eh, SH, SHEDC, EhXF, SHXF, MQCXF,
CTEh, CTSH, CTMQC), and a grid-exact split-operator reference solver.
"""

from efmqc.constants import AU_PER_FS

__all__ = ["AU_PER_FS"]
__version__ = "0.1.0"
