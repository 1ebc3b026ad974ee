"""Gradient methods whose search direction is quantized to a finite set."""

from .quantization import (
    QuantizationSet, Kind, CoverAnalysis, construct_set, quantize, covering_cosine,
    is_proper_quantization, bits_per_iteration, from_directions, load_set, save_set,
)
from .optimizer import (
    Domain, DomainKind, StepSchedule, StoppingRule, RunTrace, make_schedule, project,
    qgm_step, sign_projected_step, measure_L_alpha, scalar_projection_margins, run,
)
from .bounds import (
    ProblemConstants, BoundReport, InadmissibleStepError, descent_margins, type1_plan,
    optimal_rate_plan, strongly_convex_plan,
)
from .problems import (
    ObjectiveOracle, QuadraticOracle, quadratic_oracle, random_quadratic, scalar_benchmark_oracle,
    generate_tcp, tcp_dual_oracle, generate_flow, netflow_dual_oracle, generate_task,
    task_dual_oracle, fd_gradient_check, KinkProximityError,
)
from ._kernels import BACKEND

__version__ = "0.1.0"
