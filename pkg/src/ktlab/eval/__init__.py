from .metrics import (
    CalibrationBin,
    CalibrationReport,
    EvalRecord,
    auc,
    auc_stderr,
    calibration,
    read_records_csv,
    write_calibration_csv,
    write_records_csv,
)
from .protocols import (
    AggregateRow,
    CellResult,
    ExperimentGrid,
    ResultsTable,
    assert_split_hygiene,
    evaluate_split,
    run_cold_start,
    run_cross_domain,
    score_dataset,
    write_aggregate_csv,
    write_results_csv,
)
from .synth import (
    GroundTruthTracer,
    SyntheticWorld,
    default_world,
    generate_irt_dataset,
    load_world,
    save_world,
    synth_generate,
)
from .trajectory import TrajectoryMatrix, extract_trajectory, probe_exercise, write_trajectory_csv

__all__ = [
    "AggregateRow",
    "CalibrationBin",
    "CalibrationReport",
    "CellResult",
    "EvalRecord",
    "ExperimentGrid",
    "GroundTruthTracer",
    "ResultsTable",
    "SyntheticWorld",
    "TrajectoryMatrix",
    "assert_split_hygiene",
    "auc",
    "auc_stderr",
    "calibration",
    "default_world",
    "evaluate_split",
    "extract_trajectory",
    "generate_irt_dataset",
    "load_world",
    "probe_exercise",
    "read_records_csv",
    "run_cold_start",
    "run_cross_domain",
    "save_world",
    "score_dataset",
    "synth_generate",
    "write_aggregate_csv",
    "write_calibration_csv",
    "write_records_csv",
    "write_trajectory_csv",
]
