"""Stacked extreme learning machine surrogates for AC optimal power flow."""

from .acopf import ActiveSetSignature, OpfConfig, OpfSolution, solve_acopf
from .case_io import CaseData, load_case, parse_case, serialize_case
from .kernels import BACKEND
from .powerflow import PfConfig, solve_power_flow

__version__ = "0.1.0"

__all__ = [
    "ActiveSetSignature", "BACKEND", "CaseData", "OpfConfig", "OpfSolution", "PfConfig",
    "load_case", "parse_case", "serialize_case", "solve_acopf", "solve_power_flow",
]
