from .generate import (
    DEFAULT_EFFECTS,
    DEFAULT_PREVALENCE,
    CohortConfig,
    generate_cohort,
    with_random_labels,
)
from .io import COHORT_FILES, CohortFormatError, read_cohort, write_cohort
from .types import (
    CONDITIONS,
    MC,
    MHNS,
    Cohort,
    CohortError,
    DayRecord,
    MinuteTrace,
    UserData,
    UserProfile,
)
from .validate import ValidationReport, eligible_cohort, validate_cohort

__all__ = [
    "CONDITIONS", "MC", "MHNS", "DEFAULT_EFFECTS", "DEFAULT_PREVALENCE", "COHORT_FILES",
    "Cohort", "CohortConfig", "CohortError", "CohortFormatError", "DayRecord", "MinuteTrace",
    "UserData", "UserProfile", "ValidationReport", "eligible_cohort", "generate_cohort",
    "read_cohort", "validate_cohort", "with_random_labels", "write_cohort",
]
