"""Distributed inexact damped Newton solver for L2-regularized ERM.

Sample- and feature-partitioned preconditioned CG on a simulated cluster with
exact communication accounting.
"""
from .collectives import Cluster, NodeContext, SequenceMismatch, TrafficLedger
from .data import (
    DatasetShard,
    PartitionMode,
    SparseDataset,
    load_libsvm,
    parse_libsvm,
    partition,
    reassemble,
    write_libsvm,
)
from .losses import LossModel, Objective, full_gradient, hessian_vec, loss_second_derivative, loss_value
from .metrics import amdahl_speedup
from .precond import BlockDiagonalPrecond, WoodburyPrecond, block_preconditioner, build_preconditioner, woodbury_solve
from .solver import (
    DiscoConfig,
    DiscoResult,
    DivergenceError,
    disco_outer,
    eps_policy,
    pcg_disco_f,
    pcg_disco_s,
    solve,
)

__version__ = "0.1.0"
