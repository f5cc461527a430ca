from .config import ExperimentConfig, load_config, paper_scale
from .runner import (
    REPORT_COLUMNS,
    Lab,
    cmd_groundstate,
    cmd_localization_study,
    cmd_reference,
    cmd_ritz_study,
    cmd_run,
    cmd_study,
    cmd_time_order,
    fit_rate,
)
