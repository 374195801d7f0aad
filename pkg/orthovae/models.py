"""
Autoencoder Models Module for orthovae.

This module implements the four autoencoder variants (AE, VAE, beta-VAE with a
diagonal posterior and beta-VAE with a full-covariance posterior), their
closed-form KL terms, the split of the reconstruction loss into a
deterministic and a stochastic part, and hand-written gradients of the
training objective.

Loss convention: reconstruction is summed over output coordinates and averaged
over the batch; the KL term is averaged over the batch and weighted by beta.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from orthovae.config import CHECKPOINT_FORMAT_VERSION, MODEL_KINDS
from orthovae.errors import (
    DivergenceError,
    NotPositiveDefiniteError,
    RotationNotSupportedError,
    ShapeError,
)
from orthovae.linalg import is_orthogonal
from orthovae.nets import MlpNetwork, Optimizer, check_checkpoint_version
from orthovae.utils import as_matrix, ensure_directory_exists, make_rng

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator, None]


# ============================================================================
# Posterior and Loss Records
# ============================================================================

@dataclass
class GaussianPosterior:
    """
    Gaussian encoder posterior N(mean, Sigma) for one sample or a batch.

    Exactly one of logvar (diagonal case) and factor (full case, Sigma = L L^T)
    is set; both are None for the deterministic encoder of a plain AE.

    Attributes:
        mean: Shape (d,) or (batch, d)
        logvar: log sigma^2 per coordinate, same shape as mean
        factor: Lower-triangular L with positive diagonal, (d, d) or (batch, d, d)
    """

    mean: np.ndarray
    logvar: Optional[np.ndarray] = None
    factor: Optional[np.ndarray] = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.logvar is not None and self.factor is not None:
            raise ValueError("A posterior is either diagonal or full, not both")
        if self.logvar is not None:
            self.logvar = np.asarray(self.logvar, dtype=np.float64)
            if self.logvar.shape != self.mean.shape:
                raise ShapeError(f"logvar shape {self.logvar.shape} != mean shape {self.mean.shape}")
        if self.factor is not None:
            self.factor = np.asarray(self.factor, dtype=np.float64)
            if self.factor.shape != self.mean.shape + (self.mean.shape[-1],):
                raise ShapeError(f"factor shape {self.factor.shape} does not match mean")

    @property
    def is_diagonal(self) -> bool:
        return self.logvar is not None

    @property
    def is_full(self) -> bool:
        return self.factor is not None

    @property
    def is_deterministic(self) -> bool:
        return self.logvar is None and self.factor is None

    @property
    def latent_dim(self) -> int:
        return self.mean.shape[-1]

    def variances(self) -> np.ndarray:
        """Per-coordinate variances (diagonal of Sigma)."""
        if self.is_diagonal:
            return np.exp(self.logvar)
        if self.is_full:
            return np.sum(self.factor * self.factor, axis=-1)
        return np.zeros_like(self.mean)

    def covariance(self) -> np.ndarray:
        """Full covariance matrix (or stack of matrices)."""
        if self.is_full:
            return self.factor @ np.swapaxes(self.factor, -1, -2)
        var = self.variances()
        return var[..., :, None] * np.eye(self.latent_dim)


@dataclass
class LossBreakdown:
    """
    Batch-mean loss terms of one evaluation.

    Attributes:
        rec_total: Reconstruction loss at the sampled latent
        rec_deterministic: Reconstruction loss at the posterior mean
        rec_stochastic: rec_total - rec_deterministic
        kl: Closed-form KL to the standard normal prior
        kl_approx: Polarized-regime approximation on the active set
        beta: KL weight used by the objective
    """

    rec_total: float
    rec_deterministic: float
    rec_stochastic: float
    kl: float
    kl_approx: float
    beta: float

    @property
    def objective(self) -> float:
        return self.rec_total + self.beta * self.kl

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


# ============================================================================
# KL Divergences
# ============================================================================

def _reduce(values: np.ndarray) -> Union[float, np.ndarray]:
    return float(values) if np.ndim(values) == 0 else values


def kl_diagonal(post: GaussianPosterior) -> Union[float, np.ndarray]:
    """
    KL(N(mu, diag sigma^2) || N(0, I)) in closed form.

    Returns a float for a single posterior and one value per row for a batch.

    Example:
        >>> kl_diagonal(GaussianPosterior(np.array([1.0]), logvar=np.array([0.0])))
        0.5
    """
    if not post.is_diagonal:
        raise ValueError("kl_diagonal needs a diagonal posterior")
    var = np.exp(post.logvar)
    return _reduce(0.5 * np.sum(post.mean ** 2 + var - post.logvar - 1.0, axis=-1))


def kl_full(post: GaussianPosterior) -> Union[float, np.ndarray]:
    """
    KL(N(mu, L L^T) || N(0, I)) = 1/2 (|mu|^2 + tr(Sigma) - log det Sigma - d).

    Raises:
        NotPositiveDefiniteError: If a diagonal entry of L is not positive
    """
    if not post.is_full:
        raise ValueError("kl_full needs a full-covariance posterior")
    diag = np.diagonal(post.factor, axis1=-2, axis2=-1)
    if np.any(diag <= 0.0):
        raise NotPositiveDefiniteError("Cholesky factor has a non-positive diagonal entry")
    trace = np.sum(post.factor ** 2, axis=(-2, -1))
    log_det = 2.0 * np.sum(np.log(diag), axis=-1)
    sq_norm = np.sum(post.mean ** 2, axis=-1)
    return _reduce(0.5 * (sq_norm + trace - log_det - post.latent_dim))


def kl_divergence(post: GaussianPosterior) -> Union[float, np.ndarray]:
    """KL of any posterior family; zero for a deterministic encoder."""
    if post.is_diagonal:
        return kl_diagonal(post)
    if post.is_full:
        return kl_full(post)
    return _reduce(np.zeros(post.mean.shape[:-1]))


def kl_approx_polarized(
    post: GaussianPosterior,
    active_set: Optional[Sequence[int]] = None,
) -> Union[float, np.ndarray]:
    """
    KL restricted to active coordinates, dropping the sigma^2 term.

    1/2 sum_{j in active} (mu_j^2 - log sigma_j^2 - 1). For a full posterior
    the diagonal of Sigma stands in for sigma^2.

    Args:
        post: Posterior (single or batch)
        active_set: Active coordinate indices (all coordinates if None)
    """
    if post.is_deterministic:
        return _reduce(np.zeros(post.mean.shape[:-1]))
    idx = list(range(post.latent_dim)) if active_set is None else list(active_set)
    if not idx:
        return _reduce(np.zeros(post.mean.shape[:-1]))
    mu = post.mean[..., idx]
    logvar = np.log(post.variances()[..., idx])
    return _reduce(0.5 * np.sum(mu ** 2 - logvar - 1.0, axis=-1))


def sample_latent(post: GaussianPosterior, noise: np.ndarray) -> np.ndarray:
    """Reparametrized sample mu + sigma * eps (diagonal) or mu + L eps (full)."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != post.mean.shape:
        raise ShapeError(f"noise shape {noise.shape} != mean shape {post.mean.shape}")
    if post.is_diagonal:
        return post.mean + np.exp(0.5 * post.logvar) * noise
    if post.is_full:
        return post.mean + np.einsum("...ij,...j->...i", post.factor, noise)
    return post.mean.copy()


def rotate_noise(
    before: GaussianPosterior,
    after: GaussianPosterior,
    q: np.ndarray,
    noise: np.ndarray,
) -> np.ndarray:
    """
    Whitened noise that maps to the rotated latent sample.

    Returns eps' with mu' + L' eps' = q (mu + L eps), so losses of a model and
    its latent rotation can be compared on matched randomness.
    """
    if not (before.is_full and after.is_full):
        raise ValueError("Noise transport needs full-covariance posteriors")
    target = np.einsum("ij,...jk,...k->...i", q, before.factor, noise)
    single = target.ndim == 1
    factor = after.factor[None] if single else after.factor
    rhs = target[None] if single else target
    solved = np.linalg.solve(factor, rhs[..., None])[..., 0]
    return solved[0] if single else solved


def diagonal_rotation_projection(post: GaussianPosterior, q: np.ndarray) -> GaussianPosterior:
    """
    Rotate a diagonal posterior by q and drop the off-diagonal covariance.

    The result is the closest member of the diagonal family; its KL generally
    differs from the original, since the family is not closed under rotation.
    """
    if not post.is_diagonal:
        raise ValueError("diagonal_rotation_projection needs a diagonal posterior")
    q = as_matrix(q, "q")
    mean = post.mean @ q.T
    var = np.exp(post.logvar)
    rotated_var = var @ (q ** 2).T
    return GaussianPosterior(mean, logvar=np.log(rotated_var))


# ============================================================================
# Autoencoder
# ============================================================================

def encoder_head_dim(kind: str, latent_dim: int) -> int:
    """Width of the encoder output layer for a model kind."""
    if kind == "ae":
        return latent_dim
    if kind in ("vae", "beta_vae"):
        return 2 * latent_dim
    if kind == "beta_vae_full":
        return latent_dim + latent_dim * (latent_dim + 1) // 2
    raise ValueError(f"Unknown model kind '{kind}', expected one of {MODEL_KINDS}")


class Autoencoder:
    """
    Encoder/decoder pair with a Gaussian (or deterministic) latent layer.

    The encoder emits the posterior mean followed by log sigma^2 (diagonal) or
    the lower-triangular entries of L with exp applied to the diagonal (full).

    Attributes:
        kind (str): One of MODEL_KINDS
        encoder (MlpNetwork): Maps inputs to the posterior parameters
        decoder (MlpNetwork): Maps latents to reconstructions
        latent_dim (int): Latent width d
        beta (float): KL weight (forced to 1 for "vae", unused for "ae")
        latent_rotation (np.ndarray): Rotation applied to full covariance
            factors after apply_latent_rotation, None otherwise
    """

    def __init__(
        self,
        kind: str,
        encoder: MlpNetwork,
        decoder: MlpNetwork,
        latent_dim: int,
        beta: float = 1.0,
        latent_rotation: Optional[np.ndarray] = None,
    ):
        if kind not in MODEL_KINDS:
            raise ValueError(f"Unknown model kind '{kind}', expected one of {MODEL_KINDS}")
        if latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {latent_dim}")
        if encoder.output_dim != encoder_head_dim(kind, latent_dim):
            raise ShapeError(
                f"Encoder emits {encoder.output_dim} values, kind '{kind}' needs "
                f"{encoder_head_dim(kind, latent_dim)}"
            )
        if decoder.input_dim != latent_dim:
            raise ShapeError(f"Decoder expects {decoder.input_dim} latents, not {latent_dim}")
        if decoder.output_dim != encoder.input_dim:
            raise ShapeError("Decoder output width must equal encoder input width")
        if beta < 0:
            raise ValueError(f"beta must be >= 0, got {beta}")

        self.kind = kind
        self.encoder = encoder
        self.decoder = decoder
        self.latent_dim = latent_dim
        self.beta = 1.0 if kind == "vae" else (0.0 if kind == "ae" else float(beta))
        self.latent_rotation = latent_rotation
        self._tril = np.tril_indices(latent_dim)

    @classmethod
    def build(
        cls,
        kind: str,
        input_dim: int,
        latent_dim: int,
        hidden_sizes: Sequence[int] = (),
        activation: str = "tanh",
        beta: float = 1.0,
        rng: SeedLike = None,
    ) -> "Autoencoder":
        """
        Create a freshly initialized model; the decoder mirrors the encoder.

        Args:
            kind: Model kind
            input_dim: Data width n
            latent_dim: Latent width d
            hidden_sizes: Encoder hidden widths, e.g. (60, 40, 20)
            activation: Hidden activation
            beta: KL weight
            rng: Seed or Generator

        Example:
            >>> model = Autoencoder.build("beta_vae", 3, 2, beta=1e-4, rng=0)
            >>> model.encoder.layer_sizes
            [3, 4]
        """
        gen = make_rng(rng)
        head = encoder_head_dim(kind, latent_dim)
        encoder = MlpNetwork.build([input_dim, *hidden_sizes, head], activation, gen)
        decoder = MlpNetwork.build(
            [latent_dim, *reversed(list(hidden_sizes)), input_dim], activation, gen
        )
        return cls(kind, encoder, decoder, latent_dim, beta)

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    # ------------------------------------------------------------------
    # Encoding
    # ------------------------------------------------------------------

    def _posterior_from_head(self, head: np.ndarray) -> GaussianPosterior:
        d = self.latent_dim
        mean = head[..., :d]
        if self.kind == "ae":
            return GaussianPosterior(mean)
        if self.kind in ("vae", "beta_vae"):
            return GaussianPosterior(mean, logvar=head[..., d:])
        factor = np.zeros(head.shape[:-1] + (d, d))
        factor[..., self._tril[0], self._tril[1]] = head[..., d:]
        diag = np.arange(d)
        factor[..., diag, diag] = np.exp(factor[..., diag, diag])
        if self.latent_rotation is not None:
            q = self.latent_rotation
            cov = q @ factor @ np.swapaxes(factor, -1, -2) @ q.T
            try:
                factor = np.linalg.cholesky(0.5 * (cov + np.swapaxes(cov, -1, -2)))
            except np.linalg.LinAlgError as e:
                raise NotPositiveDefiniteError(f"Rotated covariance lost definiteness: {e}") from e
        return GaussianPosterior(mean, factor=factor)

    def encode(self, x: np.ndarray) -> GaussianPosterior:
        """Posterior for a sample or a batch of samples."""
        return self._posterior_from_head(self.encoder.forward(x))

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Reconstruction for a latent vector or batch."""
        return self.decoder.forward(z)

    # ------------------------------------------------------------------
    # Parameters and persistence
    # ------------------------------------------------------------------

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def set_parameters(self, params) -> None:
        n_enc = len(self.encoder.parameters())
        self.encoder.set_parameters(params[:n_enc])
        self.decoder.set_parameters(params[n_enc:])

    def snapshot(self):
        """Copies of all parameter arrays."""
        return [p.copy() for p in self.parameters()]

    def copy(self) -> "Autoencoder":
        rotation = None if self.latent_rotation is None else self.latent_rotation.copy()
        return Autoencoder(
            self.kind, self.encoder.copy(), self.decoder.copy(), self.latent_dim, self.beta, rotation
        )

    def save_checkpoint(self, path: Union[str, Path]) -> Path:
        """Save both networks and the model settings into one .npz file."""
        path = Path(path)
        ensure_directory_exists(path.parent)
        arrays = {
            "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
            "kind": np.array(self.kind),
            "latent_dim": np.array(self.latent_dim),
            "beta": np.array(self.beta),
            **self.encoder.to_arrays("enc_"),
            **self.decoder.to_arrays("dec_"),
        }
        if self.latent_rotation is not None:
            arrays["latent_rotation"] = self.latent_rotation
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        logger.debug(f"Saved {self.kind} checkpoint to {path}")
        return path

    @classmethod
    def load_checkpoint(cls, path: Union[str, Path]) -> "Autoencoder":
        """Load a model written by save_checkpoint()."""
        with np.load(path, allow_pickle=False) as data:
            check_checkpoint_version(data, path)
            rotation = np.array(data["latent_rotation"]) if "latent_rotation" in data.files else None
            return cls(
                kind=str(data["kind"]),
                encoder=MlpNetwork.from_arrays(data, "enc_"),
                decoder=MlpNetwork.from_arrays(data, "dec_"),
                latent_dim=int(data["latent_dim"]),
                beta=float(data["beta"]),
                latent_rotation=rotation,
            )


# ============================================================================
# Losses
# ============================================================================

def _draw_noise(model: Autoencoder, shape, rng: SeedLike, noise: Optional[np.ndarray]) -> np.ndarray:
    if noise is not None:
        return np.asarray(noise, dtype=np.float64)
    if model.kind == "ae":
        return np.zeros(shape)
    return make_rng(rng).standard_normal(shape)


def _as_batch(model: Autoencoder, x: np.ndarray) -> np.ndarray:
    batch = np.asarray(x, dtype=np.float64)
    batch = batch[None, :] if batch.ndim == 1 else batch
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise ShapeError(f"Expected samples of width {model.input_dim}, got shape {np.shape(x)}")
    return batch


def reconstruction_losses(
    model: Autoencoder,
    x: np.ndarray,
    rng: SeedLike = None,
    noise: Optional[np.ndarray] = None,
) -> Dict[str, float]:
    """
    Batch-mean reconstruction losses with one reparametrized sample per row.

    rec_deterministic is |Dec(mu) - x|^2, rec_total is |Dec(z) - x|^2 at the
    sampled latent, and rec_stochastic is their difference, whose expectation
    is the stochastic loss.

    Args:
        model: Autoencoder
        x: Sample or batch
        rng: Seed or Generator for the noise
        noise: Explicit standard-normal noise, shape (batch, d)

    Returns:
        Dictionary with keys rec_total, rec_deterministic, rec_stochastic
    """
    batch = _as_batch(model, x)
    post = model.encode(batch)
    eps = _draw_noise(model, post.mean.shape, rng, noise)
    rec_total = np.sum((model.decode(sample_latent(post, eps)) - batch) ** 2, axis=1)
    rec_det = np.sum((model.decode(post.mean) - batch) ** 2, axis=1)
    return {
        "rec_total": float(np.mean(rec_total)),
        "rec_deterministic": float(np.mean(rec_det)),
        "rec_stochastic": float(np.mean(rec_total - rec_det)),
    }


def evaluate_losses(
    model: Autoencoder,
    x: np.ndarray,
    rng: SeedLike = None,
    noise: Optional[np.ndarray] = None,
    active_set: Optional[Sequence[int]] = None,
) -> LossBreakdown:
    """
    Full loss breakdown on a batch without updating parameters.

    Args:
        model: Autoencoder
        x: Batch of samples
        rng: Seed or Generator for the noise
        noise: Explicit noise (overrides rng)
        active_set: Active coordinates for the polarized KL (all if None)

    Returns:
        LossBreakdown of batch means
    """
    batch = _as_batch(model, x)
    rec = reconstruction_losses(model, batch, rng=rng, noise=noise)
    post = model.encode(batch)
    return LossBreakdown(
        rec_total=rec["rec_total"],
        rec_deterministic=rec["rec_deterministic"],
        rec_stochastic=rec["rec_stochastic"],
        kl=float(np.mean(kl_divergence(post))),
        kl_approx=float(np.mean(kl_approx_polarized(post, active_set))),
        beta=model.beta,
    )


def decomposition_gap(
    model: Autoencoder,
    x: np.ndarray,
    samples: int,
    rng: SeedLike = None,
) -> float:
    """
    Relative gap between the Monte Carlo reconstruction loss and its split.

    Compares the mean of rec_total over `samples` draws per row against
    rec_deterministic plus the linearized stochastic loss tr(J Sigma J^T),
    J being the decoder Jacobian at the mean. Exact for linear decoders.
    """
    if model.kind == "ae":
        return 0.0
    batch = _as_batch(model, x)
    repeated = np.repeat(batch, samples, axis=0)
    rec = reconstruction_losses(model, repeated, rng=rng)
    post = model.encode(batch)
    jac = model.decoder.jacobian(post.mean)
    expected_stoch = np.einsum("bij,bjk,bik->b", jac, post.covariance(), jac)
    predicted = rec["rec_deterministic"] + float(np.mean(expected_stoch))
    return abs(rec["rec_total"] - predicted) / max(abs(predicted), np.finfo(np.float64).tiny)


# ============================================================================
# Training
# ============================================================================

def loss_gradients(
    model: Autoencoder,
    x: np.ndarray,
    noise: np.ndarray,
) -> Tuple[float, list]:
    """
    Objective mean(rec_total + beta * kl) and its gradient for every parameter.

    Args:
        model: Autoencoder without a stored latent rotation
        x: Batch of shape (batch, n)
        noise: Standard-normal noise of shape (batch, d)

    Returns:
        Tuple of (objective value, gradients ordered like model.parameters())
    """
    batch = _as_batch(model, x)
    size, d = batch.shape[0], model.latent_dim
    head, enc_cache = model.encoder.forward_with_cache(batch)
    post = model._posterior_from_head(head)
    z = sample_latent(post, noise)
    recon, dec_cache = model.decoder.forward_with_cache(z)
    residual = recon - batch
    kl = kl_divergence(post)
    objective = float(np.mean(np.sum(residual ** 2, axis=1) + model.beta * kl))

    dec_grads = model.decoder.backward(z, 2.0 * residual / size, dec_cache)
    dz = dec_grads.inputs
    kl_scale = model.beta / size

    d_head = np.zeros_like(head)
    d_head[:, :d] = dz + kl_scale * post.mean
    if post.is_diagonal:
        var = np.exp(post.logvar)
        d_head[:, d:] = dz * noise * 0.5 * np.sqrt(var) + kl_scale * 0.5 * (var - 1.0)
    elif post.is_full:
        factor = post.factor
        d_factor = dz[:, :, None] * noise[:, None, :]
        diag = np.arange(d)
        l_diag = factor[:, diag, diag]
        kl_factor = factor.copy()
        kl_factor[:, diag, diag] -= 1.0 / l_diag
        d_factor = d_factor + kl_scale * kl_factor
        # diagonal entries are stored as logs
        d_factor[:, diag, diag] *= l_diag
        d_head[:, d:] = d_factor[:, model._tril[0], model._tril[1]]

    enc_grads = model.encoder.backward(batch, d_head, enc_cache)
    return objective, enc_grads.as_list() + dec_grads.as_list()


def training_step(
    model: Autoencoder,
    batch: np.ndarray,
    optimizer: Optimizer,
    rng: SeedLike = None,
    noise: Optional[np.ndarray] = None,
) -> LossBreakdown:
    """
    One gradient step on mean over batch of (rec_total + beta * kl).

    Args:
        model: Autoencoder to update in place
        batch: Batch of samples
        optimizer: Optimizer bound to model.parameters()
        rng: Seed or Generator for the reparametrization noise
        noise: Explicit noise (overrides rng)

    Returns:
        LossBreakdown at the parameters before the step

    Raises:
        RotationNotSupportedError: If the model carries a latent rotation
        DivergenceError: If the loss or a gradient is non-finite; the
            exception carries the pre-step parameters
    """
    if model.latent_rotation is not None:
        raise RotationNotSupportedError(
            "Models with a stored latent rotation are for evaluation only"
        )
    batch = _as_batch(model, batch)
    eps = _draw_noise(model, (batch.shape[0], model.latent_dim), rng, noise)
    last_good = model.snapshot()

    breakdown = evaluate_losses(model, batch, noise=eps)
    objective, grads = loss_gradients(model, batch, eps)
    if not np.isfinite(objective):
        raise DivergenceError(
            f"Non-finite loss at step {optimizer.state.step}",
            step=optimizer.state.step,
            diagnostics=breakdown.to_dict(),
            last_good_parameters=last_good,
        )
    try:
        optimizer.step(grads)
    except DivergenceError as e:
        model.set_parameters(last_good)
        e.last_good_parameters = last_good
        raise
    return breakdown


# ============================================================================
# Latent Rotation
# ============================================================================

def _signed_permutation_abs(q: np.ndarray) -> Optional[np.ndarray]:
    rounded = np.round(q)
    if not np.allclose(q, rounded, atol=1e-12):
        return None
    absq = np.abs(rounded)
    if np.all(absq.sum(axis=0) == 1) and np.all(absq.sum(axis=1) == 1):
        return absq
    return None


def apply_latent_rotation(model: Autoencoder, q: np.ndarray) -> Autoencoder:
    """
    Return the model with latent space rotated by q.

    The encoder mean becomes q mu and the decoder becomes Dec(q^T z). For the
    full-covariance model the factor becomes chol(q L L^T q^T). Diagonal
    posteriors only admit signed permutations, which keep the family closed.

    Args:
        model: Model to rotate (left unchanged)
        q: Orthogonal d x d matrix

    Returns:
        Rotated copy of the model

    Raises:
        ValueError: If q is not orthogonal
        RotationNotSupportedError: If q is a generic rotation and the model has
            a diagonal posterior
    """
    q = as_matrix(q, "q")
    d = model.latent_dim
    if q.shape != (d, d) or not is_orthogonal(q):
        raise ValueError(f"q must be an orthogonal {d}x{d} matrix")

    perm_abs = _signed_permutation_abs(q)
    if model.kind in ("vae", "beta_vae") and perm_abs is None:
        raise RotationNotSupportedError(
            "Diagonal Gaussian posteriors are not closed under rotation; "
            "use the full-covariance model"
        )

    rotated = model.copy()
    head = rotated.encoder.layers[-1]
    head.weight[:d] = q @ head.weight[:d]
    head.bias[:d] = q @ head.bias[:d]
    if model.kind in ("vae", "beta_vae"):
        head.weight[d:] = perm_abs @ head.weight[d:]
        head.bias[d:] = perm_abs @ head.bias[d:]
    elif model.kind == "beta_vae_full":
        previous = np.eye(d) if model.latent_rotation is None else model.latent_rotation
        rotated.latent_rotation = q @ previous
    rotated.decoder = rotated.decoder.compose_input(q.T)
    logger.debug(f"Applied latent rotation to {model.kind} model")
    return rotated
