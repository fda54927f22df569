# -*- coding: utf-8 -*-
"""
梯度检查工具与用例套件测试
"""

import time

import pytest
import torch

from src.core.grad_cases import build_default_suite, run_gradcheck_suite
from src.core.grad_check import GradcheckSuite, gradient_check
from src.core.tensor_ops import OP_KINDS


def test_sum_of_squares_error_is_tiny():
    x = torch.randn(5, dtype=torch.float64)
    assert gradient_check(lambda t: (t * t).sum(), x, eps=1e-3) <= 1e-4


def test_constant_function_has_zero_error():
    x = torch.randn(4, dtype=torch.float64)
    assert gradient_check(lambda t: torch.tensor(3.0, dtype=torch.float64), x, eps=1e-3) == 0.0


def test_gelu_sum_within_tolerance():
    x = torch.randn(6, dtype=torch.float64)
    assert gradient_check(lambda t: torch.nn.functional.gelu(t).sum(), x, eps=1e-3) <= 1e-3


def test_non_positive_eps_rejected():
    with pytest.raises(ValueError):
        gradient_check(lambda t: t.sum(), torch.ones(2), eps=0.0)


def test_default_suite_covers_every_op_kind():
    suite = build_default_suite()
    for kind in OP_KINDS:
        assert kind in suite.cases
    for layer in ("mab", "isab_learned", "isab_fps", "relu_linear_attention", "global_aggregate_pma",
                  "mlp_block", "pointnet_standard", "gnn_gat", "gnn_gin", "gnn_gcn", "asap_pool", "asap_unpool"):
        assert layer in suite.cases


def test_broken_gradient_is_reported():
    class BrokenSquare(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x * x

        @staticmethod
        def backward(ctx, grad):
            (x,) = ctx.saved_tensors
            return grad * 3.0 * x

    suite = GradcheckSuite(instances=3)
    suite.register("broken_square", lambda g: (lambda x: BrokenSquare.apply(x).sum(),
                                               torch.randn(4, generator=g, dtype=torch.float64)))
    (result,) = suite.run()
    assert result.name == "broken_square"
    assert not result.passed
    assert result.max_error > 1e-3


def test_op_cases_pass():
    suite = build_default_suite(instances=5)
    results = run_gradcheck_suite(suite, [kind for kind in OP_KINDS])
    failed = [(r.name, r.max_error) for r in results if not r.passed]
    assert not failed


def test_layer_cases_pass():
    suite = build_default_suite(instances=3)
    names = [name for name in suite.cases if name not in OP_KINDS]
    results = run_gradcheck_suite(suite, names)
    failed = [(r.name, r.max_error) for r in results if not r.passed]
    assert not failed


@pytest.mark.slow
def test_full_suite_twenty_instances_under_two_minutes():
    start = time.time()
    results = run_gradcheck_suite(build_default_suite(instances=20))
    assert all(r.passed for r in results), [(r.name, r.max_error) for r in results if not r.passed]
    assert time.time() - start < 120
