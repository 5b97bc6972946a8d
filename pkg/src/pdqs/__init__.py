"""Private data trading under local differential privacy.

Owners sell perturbed data through an integrated randomiser that decides, in
one draw, whether an owner reports truthfully and how much she is paid. The
package provides the greedy (GPQM) and neural (NPQM) procurement mechanisms,
a FairQuery-style baseline, query estimators and a budget-sweep harness.
"""

from .baseline_fq import FqSelection, fq_select, run_fq
from .core import (
    AllocationFunction,
    ConstantAllocation,
    DataDomain,
    DataOwner,
    DomainKind,
    ExpAllocation,
    IncreasingAllocation,
    LinearAllocation,
    LogAllocation,
    Market,
    Rng,
    derive_rng,
    eval_allocation,
)
from .gpqm import MechanismOutcome, greedy_admission, run_gpqm
from .npqm import (
    NpqmModel,
    TrainConfig,
    dual_ascent_train,
    forward_allocation,
    gradients,
    lagrangian,
    load_model,
    run_npqm,
    save_model,
)
from .payments import PaymentQuote, expected_payment, expected_payments, expected_utility, ic_ir_check, privacy_load
from .queries import Estimator, MetricsSummary, QueryKind, QuerySpec, ae, answer_query, pac_empirical, rae, summarize
from .randomizer import IlrResult, PrivacyLoss, epsilon_of, ilr_apply

__version__ = "0.1.0"
