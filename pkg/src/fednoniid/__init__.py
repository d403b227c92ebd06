"""Non-IID federated learning benchmark toolkit.

Generate client shards under covariate, prior-probability and concept
shift, quantify the shift with the Non-IID Encoder Index, simulate FedAvg
over the shards, and drive reproducible evaluation grids.
"""

__version__ = "0.1.0"

from .datasets import (
    DataError,
    Dataset,
    fetch_dataset,
    load_cifar10,
    load_mnist,
    make_synthetic,
)
from .federated import (
    FedAvgSimulator,
    FedConfig,
    RoundLog,
    aggregate,
    client_update,
    evaluate,
    run_federated,
    simulate,
)
from .nei import (
    ClassSplit,
    Encoder,
    EncoderHyper,
    IdentityEncoder,
    NEIReport,
    NEIScorer,
    build_encoder,
    encode,
    nei,
    nei_report,
    train_autoencoder,
)
from .nn import Network, ParamSet, backward, forward, gradient_check, param_count, sgd_step
from .partition import (
    ClientShard,
    ConceptShiftPartitioner,
    CovariateShiftPartitioner,
    MaterializedShard,
    PartitionSpec,
    PriorShiftPartitioner,
    QualityInjector,
    QualitySpec,
    UnbalancedPartitioner,
    inject_quality,
    materialize,
    partition_concept,
    partition_covariate,
    partition_prior,
    partition_unbalanced,
    shift_fraction_shards,
)
from .rng import PCG32, derive_seed
from .shardio import load_shards, write_shards

__all__ = [
    "PCG32",
    "ClassSplit",
    "ClientShard",
    "ConceptShiftPartitioner",
    "CovariateShiftPartitioner",
    "DataError",
    "Dataset",
    "Encoder",
    "EncoderHyper",
    "FedAvgSimulator",
    "FedConfig",
    "IdentityEncoder",
    "MaterializedShard",
    "NEIReport",
    "NEIScorer",
    "Network",
    "ParamSet",
    "PartitionSpec",
    "PriorShiftPartitioner",
    "QualityInjector",
    "QualitySpec",
    "RoundLog",
    "UnbalancedPartitioner",
    "aggregate",
    "backward",
    "build_encoder",
    "client_update",
    "derive_seed",
    "encode",
    "evaluate",
    "fetch_dataset",
    "forward",
    "gradient_check",
    "inject_quality",
    "load_cifar10",
    "load_mnist",
    "load_shards",
    "make_synthetic",
    "materialize",
    "nei",
    "nei_report",
    "param_count",
    "partition_concept",
    "partition_covariate",
    "partition_prior",
    "partition_unbalanced",
    "run_federated",
    "sgd_step",
    "shift_fraction_shards",
    "simulate",
    "train_autoencoder",
    "write_shards",
]
