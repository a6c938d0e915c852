"""Functional PIM system simulator with a distributed MLP library.

Submodules:
    machine   - device set simulation: DPUs, MRAM/WRAM, transfers, launches
    planner   - block partitioning, padding, layout, replication accounting
    kernels   - GEMM, activations, backpropagation kernels, fast exponential
    nn        - distributed inference and single-DPU training of MLPs
    costmodel - analytical per-phase timing with calibratable parameters
    data      - iris dataset, network presets, seeded random matrices
    cli       - experiment harness (plan / train-iris / bench / sweep)
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    BlockTooLargeError,
    BusyError,
    CapacityError,
    DimError,
    DimMismatchError,
    IramOverflowError,
    KernelFault,
    MisalignedError,
    MramOverflowError,
    OverAllocationError,
    ParseError,
    PimError,
    UnequalBlocksError,
    ValidationError,
    WramOverflowError,
)
from .machine import (  # noqa: F401
    DpuSet,
    DpuState,
    LaunchMode,
    PimSystem,
    SystemConfig,
    TransferKind,
    TransferRecord,
    allocate_dpus,
)
from .planner import (  # noqa: F401
    ElemType,
    Layout,
    MatrixBuf,
    PartitionPlan,
    Placement,
    make_plan,
    pad_matrix,
    plan_dims,
    replication_rate,
    tasklet_rows,
    transpose_layout,
)
from .kernels import Activation, fast_exp, get_kernel, sigmoid_approx  # noqa: F401
from .nn import (  # noqa: F401
    InferenceExec,
    MlpConfig,
    MlpModel,
    TrainConfig,
    distributed_matmul,
    evaluate,
    feedforward,
    init_model,
    load_model,
    reference_forward,
    reference_matmul,
    save_model,
    train,
)
from .costmodel import CostParams, CostReport, Workload, sweep_dpus  # noqa: F401
