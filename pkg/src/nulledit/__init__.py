"""Desk-scale laboratory for closed-form sequential editing of linear memories."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    ContractError,
    NulleditError,
    NumericalError,
    SingularSystemError,
)
from .memory import (
    EditRequest,
    KnowledgeBase,
    LinearMemory,
    StreamConfig,
    generate_edit_stream,
    residual,
    synth_knowledge,
    synth_structured_knowledge,
)
from .projector import (
    GramAccumulator,
    Projector,
    build_projector,
    gram_absorb,
    gram_init,
    refresh_due,
    threshold_for_null_fraction,
)
from .editors import (
    MethodSpec,
    UpdateResult,
    alphaedit_update,
    apply_update,
    betaedit_update,
    memit_r_update,
    memit_update,
    rect_sparsify,
)
from .metrics import (
    InterferenceReport,
    StepRecord,
    cum_perturbation_norm,
    edit_efficacy,
    knowledge_leakage,
    pairwise_interference,
    specificity_proxy,
)
from .harness import (
    EditTrace,
    ExperimentConfig,
    TheoremReport,
    objective_value,
    oracle_solve,
    run_sequence,
    sweep,
    verify_theorem1,
)

__all__ = [
    "ConfigurationError",
    "ContractError",
    "NulleditError",
    "NumericalError",
    "SingularSystemError",
    "EditRequest",
    "KnowledgeBase",
    "LinearMemory",
    "StreamConfig",
    "generate_edit_stream",
    "residual",
    "synth_knowledge",
    "synth_structured_knowledge",
    "GramAccumulator",
    "Projector",
    "build_projector",
    "gram_absorb",
    "gram_init",
    "refresh_due",
    "threshold_for_null_fraction",
    "MethodSpec",
    "UpdateResult",
    "alphaedit_update",
    "apply_update",
    "betaedit_update",
    "memit_r_update",
    "memit_update",
    "rect_sparsify",
    "InterferenceReport",
    "StepRecord",
    "cum_perturbation_norm",
    "edit_efficacy",
    "knowledge_leakage",
    "pairwise_interference",
    "specificity_proxy",
    "EditTrace",
    "ExperimentConfig",
    "TheoremReport",
    "objective_value",
    "oracle_solve",
    "run_sequence",
    "sweep",
    "verify_theorem1",
]
