"""medrec: counterfactual-outcome-guided medication recommendation.

Supervised multi-label predictor over synthetic ICU cohorts, a retrieval
engine that estimates the length-of-stay consequence of a medication set
from comparable historical events, a reward-gated training loop that
perturbs the supervised objective with that estimate, evaluation metrics,
and a hyperbolic-space interpretation pipeline.
"""

__version__ = "0.1.0"
