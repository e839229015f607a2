"""Simulated federated protocols: fedfew, fedavg, ifca, and local-only.

One communication round of fedfew:
  1. the server broadcasts the K current models to all M clients,
  2. every client runs E epochs of mini-batch gradient descent on every
     model, then reports the full-train-set gradient and loss at the locally
     updated point (the lookahead); the local parameters are discarded,
  3. the server turns the M x K losses into outer/inner weights, aggregates
     the lookahead gradients per model, and steps each model from its
     pre-update parameters.

Full participation every round.  All randomness flows from the experiment
seed through named substreams (data, init, per-round batching), so the final
models are a pure function of the configuration regardless of how many
workers evaluate the client rounds.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (
    ClientDataset,
    MixtureSpec,
    dirichlet_partition,
    gen_mixture,
    load_csv,
    pathological_partition,
)
from .errors import ConfigError
from .metrics import weight_diagnostics
from .model import MLP, SOFTMAX, ModelSpec, grad, init_params, loss
from .numerics import Rng
from .scalarization import (
    ScalarizationConfig,
    aggregate_gradients,
    apply_sample_weighting,
    compute_weights,
    loss_matrix,
    stch_set_value,
)

METHODS = ("fedfew", "fedavg", "ifca", "local")

# named substreams of the experiment seed
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_BATCH = 2


@dataclass
class ModelConfig:
    kind: str = SOFTMAX
    hidden_dim: int = 16
    l2_penalty: float = 1e-4

    def __post_init__(self):
        if self.kind not in (SOFTMAX, MLP):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")
        if self.l2_penalty < 0:
            raise ConfigError("l2_penalty must be nonnegative")


@dataclass
class DataConfig:
    dataset: str = "mixture"
    # mixture
    groups: int = 1
    clients_per_group: list[int] | None = None
    input_dim: int = 2
    classes: int = 2
    separation: float = 1.0
    noise_std: float = 0.2
    samples_per_client: int = 100
    permute_labels: bool = False
    # csv
    csv_path: str = ""
    partition: str = "dirichlet"
    dirichlet_alpha: float = 0.5
    classes_per_client: int = 2

    def __post_init__(self):
        if self.dataset not in ("mixture", "csv"):
            raise ConfigError(f"dataset must be mixture or csv, got {self.dataset!r}")
        if self.partition not in ("dirichlet", "pathological"):
            raise ConfigError(f"unknown partition {self.partition!r}")
        if self.dataset == "csv" and not self.csv_path:
            raise ConfigError("csv dataset requires csv.path")


@dataclass
class ExperimentConfig:
    method: str
    clients: int  # M
    models: int  # K
    rounds: int  # T
    seed: int
    local_epochs: int = 1
    batch_size: int = 50
    learning_rate: float = 0.1
    mu: float = 0.01
    validation_fraction: float = 0.2
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if min(self.clients, self.models, self.rounds, self.local_epochs) < 1:
            raise ConfigError("M, K, T, and E must all be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.mu <= 0:
            raise ConfigError("mu must be positive")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.method in ("fedavg", "local") and self.models != 1:
            raise ConfigError(f"method {self.method} requires K=1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")


@dataclass
class RoundTrace:
    round: int
    stch_value: float
    grad_norms: np.ndarray  # one per server model
    alpha_cv: float
    w_entropy_mean: float
    w_max_mean: float
    uploads: int


@dataclass
class AssignmentResult:
    selected: np.ndarray  # (M,) chosen model index, ties to lowest index
    losses: np.ndarray  # (M, K) per-client loss of every model


@dataclass
class OptimumResult:
    theta: np.ndarray
    grad_norm: float
    steps: int
    converged: bool  # grad_norm <= 1e-3; False carries a convergence warning


def uploads_per_round(method: str, M: int, K: int) -> int:
    """Communication accounting: payload uploads per round."""
    if method == "fedfew":
        return M * K  # one (gradient, loss) pair per client-model
    if method == "fedavg":
        return M
    if method == "ifca":
        return M * (K + 1)  # K scalar losses plus one model per client
    return 0


def build_problem(cfg: ExperimentConfig) -> tuple[list[ClientDataset], ModelSpec]:
    """Materialize clients and the model spec from the configuration."""
    data_rng = Rng(cfg.seed).split(STREAM_DATA)
    dc = cfg.data
    if dc.dataset == "mixture":
        per_group = dc.clients_per_group
        if per_group is None:
            if cfg.clients < dc.groups:
                raise ConfigError("need at least one client per group")
            base, extra = divmod(cfg.clients, dc.groups)
            per_group = [base + (1 if g < extra else 0) for g in range(dc.groups)]
        if sum(per_group) != cfg.clients:
            raise ConfigError("clients_per_group must sum to M")
        spec = MixtureSpec(
            latent_groups=dc.groups,
            clients_per_group=list(per_group),
            input_dim=dc.input_dim,
            classes=dc.classes,
            class_mean_separation=dc.separation,
            noise_std=dc.noise_std,
            samples_per_client=dc.samples_per_client,
            label_permutation_per_group=dc.permute_labels,
        )
        clients = gen_mixture(spec, data_rng, cfg.validation_fraction)
        p, C = dc.input_dim, dc.classes
    else:
        base = load_csv(dc.csv_path)
        if dc.partition == "dirichlet":
            clients = dirichlet_partition(
                base, dc.dirichlet_alpha, cfg.clients, data_rng, cfg.validation_fraction
            )
        else:
            clients = pathological_partition(
                base, dc.classes_per_client, cfg.clients, data_rng, cfg.validation_fraction
            )
        p, C = base.input_dim, base.class_count
    model_spec = ModelSpec(
        kind=cfg.model.kind,
        input_dim=p,
        classes=C,
        hidden_dim=cfg.model.hidden_dim if cfg.model.kind == MLP else 0,
        l2_penalty=cfg.model.l2_penalty,
    )
    return clients, model_spec


def _epochs(spec, train, theta, epochs, batch_size, eta, rng):
    """Mini-batch gradient descent; batches drawn without replacement."""
    theta = np.array(theta, dtype=np.float64)
    n = train.n
    b = min(batch_size, n)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, b):
            idx = order[start : start + b]
            theta -= eta * grad(spec, theta, train.features[idx], train.labels[idx])
    return theta


def client_round(
    spec: ModelSpec,
    client: ClientDataset,
    theta_k: np.ndarray,
    local_epochs: int,
    batch_size: int,
    eta: float,
    rng: Rng,
    gradient_mode: str = "lookahead",
) -> tuple[np.ndarray, float]:
    """Lookahead gradient and loss after E local epochs from the broadcast.

    The locally updated parameters are discarded; only the full-train-set
    gradient and loss at that point are reported.  gradient_mode="delta"
    instead uploads (theta_broadcast - theta_local) / eta, the accumulated
    local update direction; it coincides with the broadcast-point gradient
    at E=1 with a single full batch, and keeps the total server movement
    comparable across (E, T) budgets with T*E fixed.
    """
    if client.train.n < 1:
        raise ConfigError("client has an empty train split")
    theta = _epochs(spec, client.train, theta_k, local_epochs, batch_size, eta, rng)
    if gradient_mode == "delta":
        if eta == 0:
            g = grad(spec, theta_k, client.train.features, client.train.labels)
        else:
            g = (np.asarray(theta_k, dtype=np.float64) - theta) / eta
    elif gradient_mode == "lookahead":
        g = grad(spec, theta, client.train.features, client.train.labels)
    else:
        raise ConfigError(f"unknown gradient_mode {gradient_mode!r}")
    return g, loss(spec, theta, client.train.features, client.train.labels)


def _local_update(spec, client, theta_k, local_epochs, batch_size, eta, rng):
    """Locally updated parameters plus the loss at that point."""
    theta = _epochs(spec, client.train, theta_k, local_epochs, batch_size, eta, rng)
    return theta, loss(spec, theta, client.train.features, client.train.labels)


def _map_tasks(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(*t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))


def _weighted(cfg: ExperimentConfig, raw_losses, grads, sizes):
    """Apply normalized-sample-size weighting to losses and gradients jointly."""
    scal = ScalarizationConfig(mu=cfg.mu)
    if scal.use_sample_weighting:
        lm = apply_sample_weighting(raw_losses, sizes)
        if grads is not None:
            grads = grads * lm.sample_weights[:, None, None]
    else:
        lm = loss_matrix(raw_losses)
    return lm, grads, scal


def _init_models(spec: ModelSpec, seed: int, count: int) -> np.ndarray:
    root = Rng(seed)
    return np.stack([init_params(spec, root.split(STREAM_INIT, k)) for k in range(count)])


def run_fedfew(
    cfg: ExperimentConfig,
    clients: list[ClientDataset] | None = None,
    spec: ModelSpec | None = None,
    workers: int = 1,
    gradient_mode: str = "lookahead",
) -> tuple[np.ndarray, list[RoundTrace]]:
    """Joint optimization of K server models via smooth set scalarization."""
    if clients is None:
        clients, spec = build_problem(cfg)
    M, K = cfg.clients, cfg.models
    if len(clients) != M:
        raise ConfigError(f"config says M={M} but {len(clients)} clients were built")
    sizes = np.array([c.train.n for c in clients], dtype=np.float64)
    thetas = _init_models(spec, cfg.seed, K)
    d = thetas.shape[1]
    traces: list[RoundTrace] = []
    for t in range(1, cfg.rounds + 1):
        tasks = [
            (spec, clients[i], thetas[k], cfg.local_epochs, cfg.batch_size,
             cfg.learning_rate, Rng(cfg.seed).split(STREAM_BATCH, t, i, k),
             gradient_mode)
            for i in range(M)
            for k in range(K)
        ]
        results = _map_tasks(client_round, tasks, workers)
        grads = np.empty((M, K, d))
        losses = np.empty((M, K))
        for idx, (g, lv) in enumerate(results):
            i, k = divmod(idx, K)
            grads[i, k] = g
            losses[i, k] = lv
        lm, wgrads, scal = _weighted(cfg, losses, grads, sizes)
        weights = compute_weights(lm, scal)
        agg = aggregate_gradients(weights, wgrads)
        thetas = thetas - cfg.learning_rate * agg
        alpha_cv, entropy, wmax = weight_diagnostics(weights)
        traces.append(RoundTrace(
            round=t,
            stch_value=stch_set_value(lm, scal),
            grad_norms=np.linalg.norm(agg, axis=1),
            alpha_cv=alpha_cv,
            w_entropy_mean=entropy,
            w_max_mean=wmax,
            uploads=uploads_per_round("fedfew", M, K),
        ))
    return thetas, traces


def run_fedavg(
    cfg: ExperimentConfig,
    clients: list[ClientDataset] | None = None,
    spec: ModelSpec | None = None,
    workers: int = 1,
) -> tuple[np.ndarray, list[RoundTrace]]:
    """Single global model via sample-size-weighted parameter averaging."""
    if cfg.models != 1:
        raise ConfigError("fedavg requires K=1")
    if clients is None:
        clients, spec = build_problem(cfg)
    M = cfg.clients
    sizes = np.array([c.train.n for c in clients], dtype=np.float64)
    weights = sizes / sizes.sum()
    theta = _init_models(spec, cfg.seed, 1)[0]
    traces: list[RoundTrace] = []
    for t in range(1, cfg.rounds + 1):
        tasks = [
            (spec, clients[i], theta, cfg.local_epochs, cfg.batch_size,
             cfg.learning_rate, Rng(cfg.seed).split(STREAM_BATCH, t, i, 0))
            for i in range(M)
        ]
        results = _map_tasks(_local_update, tasks, workers)
        locals_ = np.stack([th for th, _ in results])
        losses = np.array([[lv] for _, lv in results])
        new_theta = weights @ locals_
        lm, _, scal = _weighted(cfg, losses, None, sizes)
        sw = compute_weights(lm, scal)
        alpha_cv, entropy, wmax = weight_diagnostics(sw)
        traces.append(RoundTrace(
            round=t,
            stch_value=stch_set_value(lm, scal),
            grad_norms=np.array([np.linalg.norm(theta - new_theta) / cfg.learning_rate]),
            alpha_cv=alpha_cv,
            w_entropy_mean=entropy,
            w_max_mean=wmax,
            uploads=uploads_per_round("fedavg", M, 1),
        ))
        theta = new_theta
    return theta[None, :], traces


def run_ifca(
    cfg: ExperimentConfig,
    clients: list[ClientDataset] | None = None,
    spec: ModelSpec | None = None,
    workers: int = 1,
) -> tuple[np.ndarray, list[RoundTrace], list[AssignmentResult]]:
    """Hard clustering: clients train only their current best model."""
    if clients is None:
        clients, spec = build_problem(cfg)
    M, K = cfg.clients, cfg.models
    sizes = np.array([c.train.n for c in clients], dtype=np.float64)
    thetas = _init_models(spec, cfg.seed, K)
    traces: list[RoundTrace] = []
    assignments: list[AssignmentResult] = []
    for t in range(1, cfg.rounds + 1):
        eval_losses = np.array([
            [loss(spec, thetas[k], c.train.features, c.train.labels) for k in range(K)]
            for c in clients
        ])
        choice = np.argmin(eval_losses, axis=1)
        tasks = [
            (spec, clients[i], thetas[choice[i]], cfg.local_epochs, cfg.batch_size,
             cfg.learning_rate, Rng(cfg.seed).split(STREAM_BATCH, t, i, int(choice[i])))
            for i in range(M)
        ]
        results = _map_tasks(_local_update, tasks, workers)
        new_thetas = thetas.copy()
        for k in range(K):
            members = np.flatnonzero(choice == k)
            if members.size == 0:
                continue  # empty cluster keeps its previous parameters
            cw = sizes[members] / sizes[members].sum()
            new_thetas[k] = cw @ np.stack([results[i][0] for i in members])
        lm, _, scal = _weighted(cfg, eval_losses, None, sizes)
        sw = compute_weights(lm, scal)
        alpha_cv, entropy, wmax = weight_diagnostics(sw)
        traces.append(RoundTrace(
            round=t,
            stch_value=stch_set_value(lm, scal),
            grad_norms=np.linalg.norm(thetas - new_thetas, axis=1) / cfg.learning_rate,
            alpha_cv=alpha_cv,
            w_entropy_mean=entropy,
            w_max_mean=wmax,
            uploads=uploads_per_round("ifca", M, K),
        ))
        assignments.append(AssignmentResult(selected=choice, losses=eval_losses))
        thetas = new_thetas
    return thetas, traces, assignments


def run_local(
    cfg: ExperimentConfig,
    clients: list[ClientDataset] | None = None,
    spec: ModelSpec | None = None,
    workers: int = 1,
) -> tuple[np.ndarray, list[RoundTrace]]:
    """Every client trains its own model; no communication at all."""
    if clients is None:
        clients, spec = build_problem(cfg)
    M = cfg.clients
    sizes = np.array([c.train.n for c in clients], dtype=np.float64)
    root = Rng(cfg.seed)
    thetas = np.stack([init_params(spec, root.split(STREAM_INIT, i)) for i in range(M)])
    traces: list[RoundTrace] = []
    for t in range(1, cfg.rounds + 1):
        tasks = [
            (spec, clients[i], thetas[i], cfg.local_epochs, cfg.batch_size,
             cfg.learning_rate, Rng(cfg.seed).split(STREAM_BATCH, t, i, 0))
            for i in range(M)
        ]
        results = _map_tasks(_local_update, tasks, workers)
        new_thetas = np.stack([th for th, _ in results])
        losses = np.array([[lv] for _, lv in results])
        lm, _, scal = _weighted(cfg, losses, None, sizes)
        sw = compute_weights(lm, scal)
        alpha_cv, entropy, wmax = weight_diagnostics(sw)
        step_norm = float(np.mean(np.linalg.norm(thetas - new_thetas, axis=1))) / cfg.learning_rate
        traces.append(RoundTrace(
            round=t,
            stch_value=stch_set_value(lm, scal),
            grad_norms=np.array([step_norm]),
            alpha_cv=alpha_cv,
            w_entropy_mean=entropy,
            w_max_mean=wmax,
            uploads=0,
        ))
        thetas = new_thetas
    return thetas, traces


def select_models(spec: ModelSpec, models: np.ndarray, clients: list[ClientDataset]) -> AssignmentResult:
    """Post-training selection: argmin validation loss, ties to lowest index."""
    models = np.atleast_2d(models)
    losses = np.array([
        [loss(spec, models[k], c.validation.features, c.validation.labels)
         for k in range(models.shape[0])]
        for c in clients
    ])
    return AssignmentResult(selected=np.argmin(losses, axis=1), losses=losses)


def per_client_optimum(
    spec: ModelSpec,
    client: ClientDataset,
    budget: int = 20000,
    tol: float = 1e-6,
) -> OptimumResult:
    """Gradient descent with backtracking on the client's full train loss.

    Oracle-grade only for the convex softmax-regression spec; the MLP gets
    whatever local minimum the descent finds.
    """
    x, y = client.train.features, client.train.labels
    theta = np.zeros(spec.dim)
    f = loss(spec, theta, x, y)
    step = 1.0
    steps = 0
    g = grad(spec, theta, x, y)
    gnorm = float(np.linalg.norm(g))
    while gnorm > tol and steps < budget:
        step = min(step * 2.0, 1e6)
        gg = gnorm * gnorm
        for _ in range(60):
            trial = theta - step * g
            f_trial = loss(spec, trial, x, y)
            if f_trial <= f - 1e-4 * step * gg:
                break
            step *= 0.5
        theta, f = trial, f_trial
        g = grad(spec, theta, x, y)
        gnorm = float(np.linalg.norm(g))
        steps += 1
    return OptimumResult(theta=theta, grad_norm=gnorm, steps=steps, converged=gnorm <= 1e-3)
