import pytest
import torch

from ssdl.numerics import check_gradients, fft_forward, fft_inverse, finite_difference_grad, next_pow2


def test_fft_impulse():
    x = torch.tensor([1, 0, 0, 0], dtype=torch.complex128)
    out = fft_forward(x)
    assert torch.allclose(out, torch.ones(4, dtype=torch.complex128))


def test_fft_constant():
    x = torch.ones(4, dtype=torch.complex128)
    out = fft_forward(x)
    expected = torch.tensor([4, 0, 0, 0], dtype=torch.complex128)
    assert torch.allclose(out, expected, atol=1e-12)


def test_fft_roundtrip_random():
    torch.manual_seed(0)
    x = torch.randn(8, dtype=torch.complex128)
    back = fft_inverse(fft_forward(x))
    assert (back - x).abs().max() < 1e-6


@pytest.mark.parametrize("n,dtype,tol", [(4096, torch.complex64, 1e-6), (4096, torch.complex128, 1e-12)])
def test_fft_roundtrip_tolerances(n, dtype, tol):
    torch.manual_seed(1)
    x = torch.randn(n, dtype=dtype)
    back = fft_inverse(fft_forward(x))
    assert (back - x).abs().max() < tol


def test_fft_rejects_empty_and_short_length():
    with pytest.raises(ValueError):
        fft_forward(torch.zeros(0, dtype=torch.complex64))
    with pytest.raises(ValueError):
        fft_forward(torch.zeros(8, dtype=torch.complex64), length=4)


def test_next_pow2():
    assert next_pow2(1) == 1
    assert next_pow2(5) == 8
    assert next_pow2(1024) == 1024


def test_backward_sum_of_squares():
    w = torch.tensor([1.0, 2.0], requires_grad=True)
    loss = (w**2).sum()
    loss.backward()
    assert torch.allclose(w.grad, torch.tensor([2.0, 4.0]))


def test_backward_constant_loss_zero_grads():
    w = torch.tensor([1.0, 2.0], requires_grad=True)
    loss = (w * 0.0).sum()
    loss.backward()
    assert torch.all(w.grad == 0)


def test_finite_difference_matches_analytic():
    torch.manual_seed(2)
    w = torch.randn(5, dtype=torch.float64, requires_grad=True)
    a = torch.randn(5, dtype=torch.float64)

    def loss_fn():
        return ((w * a).sum() ** 2 + torch.sin(w).sum())

    worst = check_gradients(loss_fn, [("w", w)])
    assert worst["w"] < 1e-3


def test_finite_difference_grad_simple():
    w = torch.tensor([3.0], dtype=torch.float64)
    g = finite_difference_grad(lambda: (w**2).sum(), w)
    assert abs(g.item() - 6.0) < 1e-6
