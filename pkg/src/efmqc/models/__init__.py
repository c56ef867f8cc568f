from efmqc.models.adiabatic import AdiabaticData, evaluate_adiabatic, phase_align
from efmqc.models.shin_metiu import GridSpec, ShinMetiuParams, shin_metiu_bo_solve
from efmqc.models.cavity import CavityParams, PolaritonicModel, build_polaritonic_model
from efmqc.models.lvc import LVCParams, LVCModel, parse_lvc_file
from efmqc.models.two_state import TwoStateModel
from efmqc.models.adiabatic import ZeroNACModel

__all__ = [
    "AdiabaticData",
    "evaluate_adiabatic",
    "phase_align",
    "GridSpec",
    "ShinMetiuParams",
    "shin_metiu_bo_solve",
    "CavityParams",
    "PolaritonicModel",
    "build_polaritonic_model",
    "LVCParams",
    "LVCModel",
    "parse_lvc_file",
    "TwoStateModel",
    "ZeroNACModel",
]
