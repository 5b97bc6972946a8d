"""Numeric defaults shared by the library and the CLI.

==================  ========  ======================================
name                value     meaning
==================  ========  ======================================
EPISODES            5000      dual-ascent episodes T
HIDDEN              8         hidden width h of each head
LR_MU_START         0.005     primal learning rate, first episode
LR_MU_END           0.001     primal learning rate, last episode
LR_LAMBDA           0.005     multiplier learning rate alpha
INNER_STEPS         3         primal gradient steps per episode S
TRAIN_QUAD_NODES    64        trapezoid nodes for the training integral
TAU                 1e-6      allocation ceiling is 1 - tau
PAYMENT_QUAD_NODES  129       Simpson nodes per payment panel
PAYMENT_TOL         1e-6      absolute payment-integral tolerance
Q_MIN               0.05      debiasing threshold on q
IC_GRID_STEP        0.01      misreport grid spacing
TRIALS              100       queries per (mechanism, budget) cell
BUDGET_FRACTIONS    0.1..0.9  budgets as fractions of theta_hi * n
COEF_HI             10        log/exp coefficients ~ U(0, COEF_HI)
BID_MARGIN          1e-3      margin of the normal-to-(0, 1) mapping
==================  ========  ======================================
"""

EPISODES = 5000
HIDDEN = 8
LR_MU_START = 0.005
LR_MU_END = 0.001
LR_LAMBDA = 0.005
INNER_STEPS = 3
TRAIN_QUAD_NODES = 64
TAU = 1e-6
PAYMENT_QUAD_NODES = 129
PAYMENT_TOL = 1e-6
Q_MIN = 0.05
IC_GRID_STEP = 0.01
TRIALS = 100
BUDGET_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
COEF_HI = 10.0
BID_MARGIN = 1e-3
MECHANISMS = ("gpqm-linear", "gpqm-log", "gpqm-exp", "npqm", "fq")
