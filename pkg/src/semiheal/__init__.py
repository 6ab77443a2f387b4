"""Generation, corruption, and healing of finite semigroup Cayley tables.

The core objects are immutable Cayley tables with a MASKED sentinel for
unknown cells.  Around them sit a backtracking generator with propagation,
seeded corruption, per-cell trust scoring, a from-scratch random forest
corruption detector, vote- and subtable-based repair pipelines, and an
experiment workbench with caching and CSV export.
"""

__version__ = "0.1.0"

from .datagen import (
    GenConfig,
    GenerationBudgetError,
    GenerationShortfall,
    TablePair,
    UnsatisfiableConstraintsError,
    corrupt,
    enumerate_all,
    generate,
    read_dataset,
    write_dataset,
)
from .forest import (
    FEATURE_NAMES,
    ForestHyper,
    ForestModel,
    LabeledCell,
    extract_features,
    load_model,
    predict_proba,
    predict_proba_batch,
    save_model,
    train,
)
from .healing import (
    Candidate,
    HealReport,
    PipelineConfig,
    RepairUnsatisfiableError,
    backtracking_repair,
    deterministic_repair,
    heal_backtracking,
    heal_deterministic,
    heal_hybrid,
    heal_ml_only,
    local_heal,
    mask_by_forest,
    merge_candidates,
    vote_grid,
    vote_tally,
)
from .tables import (
    MASKED,
    CayleyTable,
    ClosureRejected,
    ClosureSet,
    MaskedCellError,
    OrderTooLargeError,
    TableValidationError,
    associativity_checks,
    associativity_counts,
    associativity_fraction,
    canonical_form,
    closure_set,
    count_classes,
    is_associative,
    iter_closure_sets,
)
from .trust import TrustMap, trust_map, trust_map_obj, trust_separation
from .workbench import (
    ExperimentConfig,
    FrequencyReport,
    RunRecord,
    cache_query,
    cache_write,
    exceeds_c_probability,
    export_metrics,
    frequency_report,
    run_experiment,
    training_rows,
)

__all__ = [
    "__version__",
    "MASKED",
    "CayleyTable",
    "ClosureRejected",
    "ClosureSet",
    "MaskedCellError",
    "OrderTooLargeError",
    "TableValidationError",
    "associativity_checks",
    "associativity_counts",
    "associativity_fraction",
    "canonical_form",
    "closure_set",
    "count_classes",
    "is_associative",
    "iter_closure_sets",
    "GenConfig",
    "GenerationBudgetError",
    "GenerationShortfall",
    "TablePair",
    "UnsatisfiableConstraintsError",
    "corrupt",
    "enumerate_all",
    "generate",
    "read_dataset",
    "write_dataset",
    "TrustMap",
    "trust_map",
    "trust_map_obj",
    "trust_separation",
    "FEATURE_NAMES",
    "ForestHyper",
    "ForestModel",
    "LabeledCell",
    "extract_features",
    "load_model",
    "predict_proba",
    "predict_proba_batch",
    "save_model",
    "train",
    "Candidate",
    "HealReport",
    "PipelineConfig",
    "RepairUnsatisfiableError",
    "backtracking_repair",
    "deterministic_repair",
    "heal_backtracking",
    "heal_deterministic",
    "heal_hybrid",
    "heal_ml_only",
    "local_heal",
    "mask_by_forest",
    "merge_candidates",
    "vote_grid",
    "vote_tally",
    "ExperimentConfig",
    "FrequencyReport",
    "RunRecord",
    "cache_query",
    "cache_write",
    "exceeds_c_probability",
    "export_metrics",
    "frequency_report",
    "run_experiment",
    "training_rows",
]
