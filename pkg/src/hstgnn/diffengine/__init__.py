from hstgnn.diffengine.gradcheck import GradCheckReport, check_function, grad_check, rel_error
from hstgnn.diffengine.optim import AdamState, adam_step
from hstgnn.diffengine.params import (
    InitSpec,
    ParameterStore,
    load_checkpoint,
    save_checkpoint,
)
from hstgnn.diffengine.tensor import Tensor, backward, no_grad
from hstgnn.diffengine import tensor as ops

__all__ = [
    "AdamState",
    "GradCheckReport",
    "InitSpec",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "backward",
    "check_function",
    "grad_check",
    "load_checkpoint",
    "no_grad",
    "ops",
    "rel_error",
    "save_checkpoint",
]
