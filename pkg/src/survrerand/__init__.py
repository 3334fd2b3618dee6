"""Survival-function estimation under simple, rerandomized and stratified
rerandomized treatment assignment."""

from .coxph import CoxFit, CoxPHSurvival, fit_cox, predict_survival
from .data import Dataset, DesignMeta, Observation, RiskTable, TimeGrid, load_dataset_csv, risk_table, validate
from .estimators import (
    CrossFitSurvival,
    InfluenceMatrix,
    IPCWKaplanMeier,
    KaplanMeier,
    SurvivalCurve,
    dml_estimate,
    ipcw_influence,
    ipcw_km_estimate,
    km_estimate,
    km_influence,
)
from .inference import covariance_report, pointwise_ci, uniform_band
from .mathcore import RngStream, chisq_cdf, kappa

__version__ = "0.1.0"

__all__ = [
    "CoxFit",
    "CoxPHSurvival",
    "fit_cox",
    "predict_survival",
    "Dataset",
    "DesignMeta",
    "Observation",
    "RiskTable",
    "TimeGrid",
    "load_dataset_csv",
    "risk_table",
    "validate",
    "CrossFitSurvival",
    "InfluenceMatrix",
    "IPCWKaplanMeier",
    "KaplanMeier",
    "SurvivalCurve",
    "dml_estimate",
    "ipcw_influence",
    "ipcw_km_estimate",
    "km_estimate",
    "km_influence",
    "covariance_report",
    "pointwise_ci",
    "uniform_band",
    "RngStream",
    "chisq_cdf",
    "kappa",
]
