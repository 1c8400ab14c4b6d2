"""Full model assembly: rollouts and the variational bound.

The generative pass runs T steps; each step samples a latent from an
autoregressive prior (standard normal at step 1, a learned head on the
previous generator state afterwards), mixes the caption words into a
dynamic sentence vector, advances the generator LSTM, and paints one
attended patch onto a cumulative canvas. The output image is the sigmoid
of the final canvas, used directly as the conditional mean.

The inference pass shares the generative machinery: at each step it reads
an attended patch of the target and of the error image, advances a
separate inference LSTM, produces the approximate posterior, samples a
latent by reparameterization, and then applies the same generative-side
updates with that latent. The bound is the Bernoulli reconstruction
log-likelihood minus the per-step KL between posterior and prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .attention import AlignParams, align
from .autodiff import Tensor
from .canvas import LinearMap, read, write
from .latent import DiagGaussian, GaussianHead, gaussian_params, kl_diag_gauss, sample_reparam
from .recurrent import LangEncoding, LstmWeights, encode_caption, lstm_step
from .rng import RngStream


@dataclass
class ModelConfig:
    glimpses: int = 32
    image_height: int = 60
    image_width: int = 60
    gen_hidden: int = 300
    infer_hidden: int = 300
    latent_dim: int = 150
    read_patch: int = 8
    write_patch: int = 8
    enc_hidden: int = 128
    align_dim: int = 512
    vocab_size: int = 21
    use_intensity: bool = True
    use_align: bool = True

    def validate(self):
        sizes = (
            self.glimpses, self.image_height, self.image_width, self.gen_hidden,
            self.infer_hidden, self.latent_dim, self.read_patch, self.write_patch,
            self.enc_hidden, self.align_dim, self.vocab_size,
        )
        if any(s < 1 for s in sizes):
            raise ValueError(f"ModelConfig: every size must be >= 1, got {self}")
        return self


def parameter_shapes(config: ModelConfig) -> dict:
    """Name -> shape for every learnable tensor, in canonical order."""
    c = config
    m, n, ni, d = c.enc_hidden, c.gen_hidden, c.infer_hidden, c.latent_dim
    l = c.align_dim
    gen_in = d + 2 * m
    infer_in = 2 * c.read_patch * c.read_patch + n
    return {
        "embedding": (c.vocab_size, m),
        "enc_fwd/w_input": (4 * m, m), "enc_fwd/w_hidden": (4 * m, m), "enc_fwd/bias": (4 * m,),
        "enc_bwd/w_input": (4 * m, m), "enc_bwd/w_hidden": (4 * m, m), "enc_bwd/bias": (4 * m,),
        "align/score_weights": (l,), "align/enc_proj": (l, 2 * m),
        "align/state_proj": (l, n), "align/bias": (l,),
        "gen/w_input": (4 * n, gen_in), "gen/w_hidden": (4 * n, n), "gen/bias": (4 * n,),
        "infer/w_input": (4 * ni, infer_in), "infer/w_hidden": (4 * ni, ni), "infer/bias": (4 * ni,),
        "prior/w_mean": (d, n), "prior/w_std": (d, n),
        "posterior/w_mean": (d, ni), "posterior/w_std": (d, ni),
        "write_patch/weight": (c.write_patch ** 2, n), "write_patch/bias": (c.write_patch ** 2,),
        "write_grid/weight": (5, n), "write_grid/bias": (5,),
        "read_grid/weight": (5, n), "read_grid/bias": (5,),
        "canvas_bias": (c.image_height, c.image_width),
        "gen_hidden_bias": (n,),
        "infer_hidden_bias": (ni,),
    }


class ModelParams:
    """All learnable tensors, addressable by name and by structured group."""

    def __init__(self, config: ModelConfig, tensors: dict):
        expected = parameter_shapes(config)
        missing = [k for k in expected if k not in tensors]
        extra = [k for k in tensors if k not in expected]
        if missing or extra:
            raise ValueError(f"ModelParams: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ad.ShapeMismatch(
                    f"ModelParams: {name} has shape {tensors[name].shape}, expected {shape}"
                )
        self.config = config
        self.tensors = {name: tensors[name] for name in expected}  # canonical order

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def _lstm(self, prefix: str) -> LstmWeights:
        return LstmWeights(
            w_input=self.tensors[f"{prefix}/w_input"],
            w_hidden=self.tensors[f"{prefix}/w_hidden"],
            bias=self.tensors[f"{prefix}/bias"],
        )

    @property
    def enc_fwd(self):
        return self._lstm("enc_fwd")

    @property
    def enc_bwd(self):
        return self._lstm("enc_bwd")

    @property
    def gen_lstm(self):
        return self._lstm("gen")

    @property
    def infer_lstm(self):
        return self._lstm("infer")

    @property
    def align_params(self) -> AlignParams:
        return AlignParams(
            score_weights=self.tensors["align/score_weights"],
            enc_proj=self.tensors["align/enc_proj"],
            state_proj=self.tensors["align/state_proj"],
            bias=self.tensors["align/bias"],
        )

    @property
    def prior_head(self) -> GaussianHead:
        return GaussianHead(w_mean=self.tensors["prior/w_mean"], w_std=self.tensors["prior/w_std"])

    @property
    def posterior_head(self) -> GaussianHead:
        return GaussianHead(
            w_mean=self.tensors["posterior/w_mean"], w_std=self.tensors["posterior/w_std"]
        )

    def _linear(self, prefix: str) -> LinearMap:
        return LinearMap(
            weight=self.tensors[f"{prefix}/weight"], bias=self.tensors[f"{prefix}/bias"]
        )

    @property
    def write_patch_head(self):
        return self._linear("write_patch")

    @property
    def write_grid_head(self):
        return self._linear("write_grid")

    @property
    def read_grid_head(self):
        return self._linear("read_grid")


def encode(params: ModelParams, codes) -> LangEncoding:
    return encode_caption(codes, params["embedding"], params.enc_fwd, params.enc_bwd)


def _sentence_vector(params: ModelParams, gen_state: Tensor, enc: LangEncoding, config):
    """Dynamic representation, or the terminal encoder summary when the
    align operator is disabled (each direction's last computed state)."""
    if config.use_align:
        out = align(gen_state, enc, params.align_params)
        return out.representation, out.probabilities
    m = enc.per_direction
    last_fwd = ad.narrow(enc.word_vector(enc.length - 1), 0, 0, m)
    first_bwd = ad.narrow(enc.word_vector(0), 0, m, m)
    return ad.concat([last_fwd, first_bwd]), None


@dataclass
class StepTrace:
    latent: np.ndarray
    attention: Optional[np.ndarray]
    grid: dict
    canvas: np.ndarray


@dataclass
class GenTrace:
    steps: list
    mean_image: np.ndarray


def generate(params: ModelParams, enc: LangEncoding, rng: Optional[RngStream] = None,
             forced_latents=None) -> GenTrace:
    """Prior-mode rollout; the image is the conditional mean sigmoid(c_T).

    ``forced_latents`` replaces prior sampling with the given (T, D) array;
    otherwise latents are drawn from the learned autoregressive prior, with
    step 1 fixed to the standard normal.
    """
    config = params.config
    t_steps, d = config.glimpses, config.latent_dim
    if forced_latents is None and rng is None:
        raise ValueError("generate: need an RngStream or forced latents")
    with ad.no_grad():
        gen_h = params["gen_hidden_bias"]
        gen_c = ad.constant(np.zeros(config.gen_hidden))
        canvas = params["canvas_bias"]
        steps = []
        for t in range(t_steps):
            if forced_latents is not None:
                z_value = np.asarray(forced_latents[t], dtype=np.float64)
            else:
                if t == 0:
                    prior = DiagGaussian.standard(d)
                else:
                    prior = gaussian_params(gen_h, params.prior_head)
                z_value = prior.mean.data + prior.std.data * rng.standard_normal(d)
            sentence, alpha = _sentence_vector(params, gen_h, enc, config)
            step_in = ad.concat([ad.constant(z_value), sentence])
            gen_h, gen_c = lstm_step(gen_h, gen_c, step_in, params.gen_lstm)
            delta, gp = write(
                gen_h, params.write_patch_head, params.write_grid_head,
                config.image_height, config.image_width, config.write_patch,
                config.use_intensity,
            )
            canvas = canvas + delta
            steps.append(StepTrace(
                latent=z_value,
                attention=None if alpha is None else alpha.data.copy(),
                grid=gp.as_floats(),
                canvas=canvas.data.copy(),
            ))
        mean_image = ad.sigmoid(canvas).data.copy()
    return GenTrace(steps=steps, mean_image=mean_image)


def bernoulli_nll(canvas_logits: Tensor, image: np.ndarray) -> Tensor:
    """Negative Bernoulli log-likelihood of the image under sigmoid(canvas),
    formed from logits:  sum softplus(c) - x*c."""
    x = ad.constant(image)
    return ad.total(ad.softplus(canvas_logits)) - ad.total(ad.mul(canvas_logits, x))


@dataclass
class SampleDetail:
    """Per-step distributions and draws of one inference rollout."""

    latents: np.ndarray          # (T, D)
    posterior_means: np.ndarray  # (T, D)
    posterior_stds: np.ndarray
    prior_means: np.ndarray
    prior_stds: np.ndarray
    recon_nll: float
    canvases: list = field(default_factory=list)


@dataclass
class LossReport:
    reconstruction_nll: float
    kl_per_step: np.ndarray
    bound: float
    bound_node: Tensor
    details: list = field(default_factory=list)


def _inference_rollout(params: ModelParams, image_const: Tensor, image: np.ndarray,
                       enc: LangEncoding, step_noise: np.ndarray, collect: bool):
    config = params.config
    t_steps, d = config.glimpses, config.latent_dim
    gen_h = params["gen_hidden_bias"]
    gen_c = ad.constant(np.zeros(config.gen_hidden))
    inf_h = params["infer_hidden_bias"]
    inf_c = ad.constant(np.zeros(config.infer_hidden))
    canvas = params["canvas_bias"]
    kl_nodes = []
    detail = SampleDetail(
        latents=np.zeros((t_steps, d)), posterior_means=np.zeros((t_steps, d)),
        posterior_stds=np.zeros((t_steps, d)), prior_means=np.zeros((t_steps, d)),
        prior_stds=np.zeros((t_steps, d)), recon_nll=0.0,
    ) if collect else None

    for t in range(t_steps):
        error_image = image_const - ad.sigmoid(canvas)
        glimpse, _ = read(
            image_const, error_image, gen_h, params.read_grid_head,
            config.read_patch, config.use_intensity,
        )
        inf_h, inf_c = lstm_step(inf_h, inf_c, ad.concat([glimpse, gen_h]), params.infer_lstm)
        posterior = gaussian_params(inf_h, params.posterior_head)
        z = sample_reparam(posterior, step_noise[t])
        prior = DiagGaussian.standard(d) if t == 0 else gaussian_params(gen_h, params.prior_head)
        kl_nodes.append(kl_diag_gauss(posterior, prior))
        sentence, _ = _sentence_vector(params, gen_h, enc, config)
        gen_h, gen_c = lstm_step(gen_h, gen_c, ad.concat([z, sentence]), params.gen_lstm)
        delta, _ = write(
            gen_h, params.write_patch_head, params.write_grid_head,
            config.image_height, config.image_width, config.write_patch,
            config.use_intensity,
        )
        canvas = canvas + delta
        if collect:
            detail.latents[t] = z.data
            detail.posterior_means[t] = posterior.mean.data
            detail.posterior_stds[t] = posterior.std.data
            detail.prior_means[t] = prior.mean.data
            detail.prior_stds[t] = prior.std.data
            detail.canvases.append(canvas.data.copy())

    recon = bernoulli_nll(canvas, image)
    if collect:
        detail.recon_nll = float(recon.data)
    return recon, kl_nodes, detail


def infer_bound(params: ModelParams, image: np.ndarray, enc: LangEncoding,
                rng: Optional[RngStream] = None, samples: int = 1,
                noise=None, collect: bool = False) -> LossReport:
    """Monte Carlo estimate of the variational bound over ``samples`` draws.

    ``noise`` may supply a list of (T, D) arrays, one per sample, to freeze
    the latent draws (finite-difference checks rely on this). The returned
    ``bound_node`` is the scalar tape node, suitable for backward().
    """
    config = params.config
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (config.image_height, config.image_width):
        raise ad.ShapeMismatch(
            f"infer_bound: image {image.shape} vs configured "
            f"({config.image_height}, {config.image_width})"
        )
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("infer_bound: pixel values must lie in [0, 1]")
    if samples < 1:
        raise ValueError("infer_bound: need at least one sample")
    if noise is None:
        if rng is None:
            raise ValueError("infer_bound: need an RngStream or frozen noise")
        noise = [rng.standard_normal((config.glimpses, config.latent_dim))
                 for _ in range(samples)]
    elif len(noise) != samples:
        raise ValueError(f"infer_bound: {len(noise)} noise blocks for {samples} samples")

    image_const = ad.constant(image)
    recon_nodes = []
    kl_totals = None
    kl_values = np.zeros(config.glimpses)
    details = []
    for ell in range(samples):
        recon, kl_nodes, detail = _inference_rollout(
            params, image_const, image, enc, np.asarray(noise[ell], dtype=np.float64), collect
        )
        recon_nodes.append(recon)
        kl_values += np.array([k.data for k in kl_nodes]) / samples
        step_sum = kl_nodes[0]
        for k in kl_nodes[1:]:
            step_sum = step_sum + k
        kl_totals = step_sum if kl_totals is None else kl_totals + step_sum
        if collect:
            details.append(detail)

    recon_sum = recon_nodes[0]
    for r in recon_nodes[1:]:
        recon_sum = recon_sum + r
    bound_node = ad.neg(recon_sum + kl_totals) * (1.0 / samples)
    recon_mean = float(recon_sum.data) / samples
    return LossReport(
        reconstruction_nll=recon_mean,
        kl_per_step=kl_values,
        bound=float(bound_node.data),
        bound_node=bound_node,
        details=details,
    )
