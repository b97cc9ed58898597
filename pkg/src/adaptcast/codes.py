import re
from typing import Tuple

from .common import ValidationError
from .model_zoo import ModelSpec

# Fixed model codes M0_12_PDQ010 .. M12_96_PDQ121
MODEL_CODE_RE = re.compile(r"^M(1[0-2]|[0-9])_(\d+)_PDQ([0-9])([0-9])([0-9])$")

# Learnt model codes MG13_25+75_type-0_0.9
SELECTOR_CODE_RE = re.compile(r"^MG(13|14)_(25|50|75)\+(25|50|75)_type-([0-3])_([0-9.]+)$")


def model_code(spec: ModelSpec) -> str:
    """
    Render a model as 'M{group}_{w}_PDQ{p}{d}{q}'.
    """
    return f"M{spec.group}_{spec.w}_PDQ{spec.p}{spec.d}{spec.q}"


def parse_model_code(code: str) -> ModelSpec:
    """
    Inverse of model_code; only grid models are accepted.
    """
    match = MODEL_CODE_RE.match(code.strip())
    if not match:
        raise ValidationError(f"Invalid model code: {code}")
    group, w, p, d, q = (int(g) for g in match.groups())
    spec = ModelSpec(group, w, p, d, q)
    if not spec.on_grid:
        raise ValidationError(f"Model code outside the grid: {code}")
    return spec


def selector_code(mode: str, penalty_type: int, lam: float, c1: float, c2: float) -> str:
    """
    Render a learnt model as 'MG{13|14}_{c1}+{c2}_type-{k}_{lambda}' with quantiles in percent.
    """
    group = mode.removeprefix("group")
    return f"MG{group}_{round(c1 * 100)}+{round(c2 * 100)}_type-{penalty_type}_{lam:g}"


def parse_selector_code(code: str) -> Tuple[str, int, float, float, float]:
    """
    Inverse of selector_code: (mode, penalty_type, lambda, c1, c2).
    """
    match = SELECTOR_CODE_RE.match(code.strip())
    if not match:
        raise ValidationError(f"Invalid selector code: {code}")
    group, c1, c2, k, lam = match.groups()
    return f"group{group}", int(k), float(lam), int(c1) / 100, int(c2) / 100
