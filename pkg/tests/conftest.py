import numpy as np
import pytest

from dynjoint.model import AttributeSeries, ModelConfig, MultiplexGraphSeries
from dynjoint.simulate import MaskPolicy, Scheme1Params, Sizes, apply_mask, integer_grid, simulate_scheme1


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_problem(seed=0, J=3, T=4, L=2, m=2, R=2, Rz=2, hide=0.3, joint=True):
    """Small random graph/attribute pair with some hidden cells, plus a config."""
    rng = np.random.default_rng(seed)
    grid = integer_grid(T)
    adj = (rng.random((L, T, J, J)) < 0.5).astype(np.int8)
    mask = rng.random((L, T, J, J)) > hide
    graph = MultiplexGraphSeries.from_dense(grid, adj, mask)
    x = rng.standard_normal((J, m, T))
    amask = rng.random((J, m, T)) > hide
    attrs = AttributeSeries(grid, x, amask)
    config = ModelConfig(shared_rank=Rz, layer_rank=R, burn_in=0, keep=5, seed=seed,
                         joint_mode=joint)
    return graph, attrs, config


def small_scheme1(seed=0, J=6, T=6, holdout=1):
    rng = np.random.default_rng(seed)
    sizes = Sizes(num_nodes=J, num_times=T, layer_rank=2, shared_rank=2)
    data = simulate_scheme1(Scheme1Params(sizes=sizes), integer_grid(T), rng)
    masked = apply_mask(data.graph, MaskPolicy(time_select_prob=0.5, holdout_future_times=holdout),
                        rng, data.attrs)
    return data, masked


def random_state(graph, attrs, config, seed=1):
    """A generic latent state: prior draws, random sigma2, random kernels per family."""
    from dynjoint.gibbs import initial_state

    rng = np.random.default_rng(seed)
    state, _ = initial_state(graph, attrs, config, rng)
    state.sigma2[:] = rng.uniform(0.5, 2.0, state.sigma2.shape)
    cands = list(config.hyper_grid)
    for fam in state.beta:
        state.beta[fam] = config.kernel(cands[int(rng.integers(len(cands)))])
    for name in ("mu", "eta", "zeta", "xi", "alpha", "xi_attr"):
        arr = getattr(state, name)
        if arr is not None:
            arr += 0.3 * rng.standard_normal(arr.shape)
    return state


def make_archive(Q=5, J=4, T=5, L=2, m=2, R=2, Rz=2, seed=0, scale=1.0, beta=(0.05, 0.05),
                 joint=True):
    """Archive of i.i.d. prior draws (scaled), for prediction and I/O tests."""
    from dynjoint.model import FAMILIES, PosteriorArchive, prior_factor

    rng = np.random.default_rng(seed)
    grid = integer_grid(T)
    config = ModelConfig(shared_rank=Rz, layer_rank=R, keep=Q, joint_mode=joint)
    chol = prior_factor(grid, config.kernel(beta), config.jitter)[0]

    def draw(*shape):
        return scale * rng.standard_normal((Q,) + shape + (T,)) @ chol.T

    families = FAMILIES if joint else FAMILIES + ("xi_attr",)
    return PosteriorArchive(
        grid=grid, config=config, mu=draw(), eta=draw(m), zeta=draw(J, Rz), xi=draw(J, L, R),
        alpha=draw(m, L, R), sigma2=rng.uniform(0.5, 1.5, (Q, m)),
        beta=np.tile(np.array(beta, dtype=float), (Q, len(families), 1)), families=families,
        xi_attr=None if joint else draw(J, L, R),
    )


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
