"""Dynamic-circuit implementations of generalized quantum measurements.

The package builds measurement circuits for rank-one POVMs via Naimark
dilation, a binary search tree, or their Naimark-terminated hybrid;
simulates them exactly under a depolarizing + readout noise model; and
evaluates them with detector/state tomography, Choi-matrix fidelities and
conditional readout error mitigation.
"""

from .circuit import (
    CnotGate,
    CompiledBlock,
    Condition,
    ConditionalUnitary,
    DynamicCircuit,
    Measure,
    Reset,
    RotationGate,
    UnitaryBox,
    deserialize,
    serialize,
    static_counts,
    validate_circuit,
)
from .compiler import (
    CompilationResult,
    ResourceEstimate,
    approx_compile,
    pareto_sweep,
    resource_estimate,
)
from .linalg import (
    complete_to_unitary,
    eigh,
    hermitian_sqrt,
    pinv,
    project_to_psd,
    state_fidelity,
)
from .mitigation import (
    ConfusionMatrix,
    CremEnsemble,
    build_calibration_ensemble,
    crem_mitigate,
    hellinger,
    standard_rem,
)
from .povm import (
    Povm,
    outcome_probabilities,
    pad_to_power_of_two,
    povm_choi,
    povm_fidelity,
    sic_povm,
    validate,
)
from .schemes import (
    BranchKraus,
    SchemeOutput,
    build_binary_tree,
    build_hybrid,
    build_naimark,
    build_scheme,
    cumulative_kraus,
)
from .simulator import (
    ExecutionTrace,
    NoiseModel,
    depolarize,
    run_exact,
    sample,
)
from .tomography import (
    ReconstructionResult,
    bootstrap,
    detector_tomography,
    pauli_preparation_set,
    state_tomography,
)

__version__ = "0.1.0"
