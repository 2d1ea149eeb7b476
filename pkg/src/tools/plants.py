"""The three case-study plants as linear systems, their templates and physical views."""
import logging
from typing import Dict, Optional

import numpy as np

from src.models.coefficients import CoefficientVector
from src.models.scenario import BmmParams, BrakeParams, PitchParams, PlantKind
from src.models.system import LinearOdeSystem, SystemTemplate

logger = logging.getLogger(__name__)

BMM_LABELS = {
    "a[i,i]": "-n",
    "a[i_s,i]": "p2",
    "a[i_s,i_s]": "-p1",
    "a[G,i_s]": "Gb",
    "a[G,G]": "-p3",
    "b[i]": "p4",
    "b[G]": "1/VoI",
}

PITCH_LABELS = {
    "a[alpha,alpha]": "c_aa",
    "a[alpha,q]": "c_aq",
    "a[q,alpha]": "c_qa",
    "a[q,q]": "c_qq",
    "a[theta,q]": "c_tq",
    "b[alpha]": "c_ad",
    "b[q]": "c_qd",
}

BRAKE_LABELS = {
    "a[a,a]": "k_aa",
    "a[a,v]": "k_av",
    "a[a,s]": "k_as",
    "a[v,a]": "k_va",
    "a[s,v]": "k_sv",
    "c[a]": "c_a",
    "c[s]": "c_s",
}


def bmm_system(params: Optional[BmmParams] = None) -> LinearOdeSystem:
    """Linearized minimal model around basal; states (i, i_s, G), only G sensed."""
    p = params or BmmParams()
    return LinearOdeSystem(
        n=3,
        A=[
            [-p.n, 0.0, 0.0],
            [p.p2, -p.p1, 0.0],
            [0.0, p.Gb, -p.p3],
        ],
        B_diag=[p.p4, 0.0, 1.0 / p.VoI],
        beta_diag=[0, 0, 1],
        affine_offset=[0.0, -p.p2 * p.i_b, 0.0],
        state_names=["i", "i_s", "G"],
        input_names=["insulin", "", "meal"],
    )


def pitch_system(params: Optional[PitchParams] = None) -> LinearOdeSystem:
    """Pitch dynamics; states (alpha, q, theta), elevator on both alpha and q, theta sensed."""
    p = params or PitchParams()
    return LinearOdeSystem(
        n=3,
        A=[
            [p.c_aa, p.c_aq, 0.0],
            [p.c_qa, p.c_qq, 0.0],
            [0.0, p.c_tq, 0.0],
        ],
        B_diag=[p.c_ad, p.c_qd, 0.0],
        beta_diag=[0, 0, 1],
        state_names=["alpha", "q", "theta"],
        input_names=["elevator", "elevator_q", ""],
    )


def brake_system(params: Optional[BrakeParams] = None) -> LinearOdeSystem:
    """Open-loop braking kinematics in (a, v, s) order with a jerk input on a."""
    p = params or BrakeParams()
    return LinearOdeSystem(
        n=3,
        A=[
            [p.k_aa, p.k_av, p.k_as],
            [p.k_va, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ],
        B_diag=[p.input_gain, 0.0, 0.0],
        beta_diag=[1, 1, 1],
        affine_offset=[p.c_a, 0.0, p.c_s],
        state_names=["a", "v", "s"],
        input_names=["jerk", "", ""],
    )


def brake_kinematics(params: Optional[BrakeParams] = None) -> LinearOdeSystem:
    """The braking kinematics as an autonomous system (no logged input)."""
    plant = brake_system(params)
    return LinearOdeSystem(
        n=3,
        A=plant.A,
        B_diag=[0.0, 0.0, 0.0],
        beta_diag=[1, 1, 1],
        affine_offset=plant.affine_offset,
        state_names=plant.state_names,
        input_names=["", "", ""],
    )


def bmm_template(params: Optional[BmmParams] = None) -> SystemTemplate:
    return SystemTemplate.from_system(bmm_system(params), labels=BMM_LABELS)


def pitch_template(params: Optional[PitchParams] = None) -> SystemTemplate:
    return SystemTemplate.from_system(pitch_system(params), labels=PITCH_LABELS)


def brake_template(params: Optional[BrakeParams] = None) -> SystemTemplate:
    """Closed-loop braking is mined as autonomous affine kinematics."""
    return SystemTemplate.from_system(brake_kinematics(params), labels=BRAKE_LABELS)


def plant_system(kind: PlantKind, params) -> LinearOdeSystem:
    builders = {PlantKind.BMM: bmm_system, PlantKind.PITCH: pitch_system, PlantKind.BRAKE: brake_system}
    return builders[PlantKind(kind)](params)


def plant_template(kind: PlantKind, params=None) -> SystemTemplate:
    builders = {PlantKind.BMM: bmm_template, PlantKind.PITCH: pitch_template, PlantKind.BRAKE: brake_template}
    return builders[PlantKind(kind)](params)


# Physical views: mined vectors back to table columns; pinned entries come from the template

def _with_pinned(omega: CoefficientVector, template: Optional[SystemTemplate]) -> Dict[str, float]:
    values = template.template_values() if template is not None else {}
    values.update(omega.named())
    return values


def bmm_physical(omega: CoefficientVector, template: Optional[SystemTemplate] = None) -> Dict[str, float]:
    v = _with_pinned(omega, template)
    return {
        "p1": -v["-p1"],
        "p2": v["p2"],
        "p3": -v["-p3"],
        "p4": v["p4"],
        "n": -v["-n"],
        "VoI": 1.0 / v["1/VoI"],
        "Gb": v["Gb"],
    }


def pitch_physical(omega: CoefficientVector, template: Optional[SystemTemplate] = None) -> Dict[str, float]:
    v = _with_pinned(omega, template)
    return {label: v[label] for label in PITCH_LABELS.values()}


def brake_physical(omega: CoefficientVector, template: Optional[SystemTemplate] = None) -> Dict[str, float]:
    v = _with_pinned(omega, template)
    return {label: v[label] for label in BRAKE_LABELS.values()}


def physical_view(
    kind: PlantKind, omega: CoefficientVector, template: Optional[SystemTemplate] = None
) -> Dict[str, float]:
    views = {PlantKind.BMM: bmm_physical, PlantKind.PITCH: pitch_physical, PlantKind.BRAKE: brake_physical}
    try:
        return views[PlantKind(kind)](omega, template)
    except (KeyError, ValueError):
        logger.debug("Coefficient labels do not match the plant view; returning raw labels")
        return omega.named()


def predictor_system(kind: PlantKind, params=None) -> LinearOdeSystem:
    """Nominal plant as seen from the logged commands.

    For the pitch loop the AoA augmentation runs downstream of the logged
    elevator command, so it is folded into A here.
    """
    kind = PlantKind(kind)
    plant = plant_system(kind, params)
    if kind != PlantKind.PITCH:
        return plant
    p = params or PitchParams()
    A = np.array(plant.A, dtype=float)
    A[:, 0] -= p.k_aug * plant.b_diag
    return LinearOdeSystem(
        n=plant.n,
        A=A,
        B=plant.B,
        beta=plant.beta,
        affine_offset=plant.affine_offset,
        state_names=plant.state_names,
        input_names=plant.input_names,
    )
