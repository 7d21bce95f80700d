"""Auditor behavior monitoring and a login-log random forest."""

from .behavior import (
    AuditorProfile, AuditorStatus, AuditRecord, Color, DurationModel, Sentinel,
    assign_quadrant, complexity_class, deviation_score, fit_duration_model, mad,
    records_from_ledger, theil_sen, update_status,
)
from .forest import (
    ABNORMAL, FEATURES, NORMAL, OUTCOME_CODES, ForestModel, Node, forest_classify, forest_train,
    login_features, synthetic_login_log,
)
