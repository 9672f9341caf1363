from .runs import EstimationRun, SourceEstimate, EstimationRunManager
