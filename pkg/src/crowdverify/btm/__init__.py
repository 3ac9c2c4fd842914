"""Bounty task manager: task fabrication and conversion, bundles, answer
validation and the simulated ledger."""

from .tasks import (
    R_BASIC,
    R_BUG,
    BugFound,
    BundleError,
    FabricationError,
    Fabricated,
    Genuine,
    Reject,
    Task,
    TaskBundle,
    Verified,
    convert_task,
    fabricate_task,
    fabricate_without,
    function_hash,
    genuine_tasks,
    make_bundle,
    make_task,
    satisfies,
    validate_answer,
)

__all__ = [
    "R_BASIC", "R_BUG", "BugFound", "BundleError", "FabricationError", "Fabricated", "Genuine",
    "Reject", "Task", "TaskBundle", "Verified", "convert_task", "fabricate_task", "fabricate_without",
    "function_hash", "genuine_tasks", "make_bundle", "make_task", "satisfies", "validate_answer",
]
