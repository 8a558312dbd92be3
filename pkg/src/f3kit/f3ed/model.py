"""Model definition and the composite forward/backward pass.

The pipeline per window of sampled frames:

* backbone: feature adapter with a temporal channel shift (feature mode) or
  a small shift-interleaved convnet (pixel mode), giving per-frame vectors;
* VE: a bidirectional GRU over those vectors (a per-frame linear layer when
  the GRU is ablated away);
* LCL: per-frame sigmoid scores for "an event happens here";
* MLC: per-event element probabilities read from the embedding rows at the
  event frames (ground-truth frames during training, detected peaks at
  inference);
* CTX: a bidirectional GRU over the event sequence that refines the element
  probabilities using the localizer confidence as an extra input channel.

The training loss is the unweighted sum of the three terms.  Gradients are
hand-derived and flow end to end, including from the refiner back through
the classifier into the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..neural import (ParamStore, bigru, bigru_backward, conv_backbone,
                      conv_backbone_backward, init_bigru_params,
                      init_conv_backbone_params, init_linear_params, linear,
                      linear_backward, sigmoid, softmax_cross_entropy,
                      tsm_shift, tsm_shift_backward, weighted_bce)
from ..taxonomy import load_taxonomy


@dataclass
class F3EDConfig:
    taxonomy_name: str = "tennis-singles"
    granularity: str = "high"
    clip_length: int = 96          # window length in sampled frames
    stride: int = 2                # temporal sampling stride
    window_overlap: float = 0.5
    input_dim: int = 64            # feature-mode channel count
    ve_hidden: int = 64            # encoder GRU width; embedding is twice this
    ctx_hidden: int = 64
    fg_weight: float = 5.0
    threshold: float = 0.5
    min_separation: int = 5        # frames, for peak suppression
    head_mode: str = "multi-label"   # multi-label | multi-class
    ctx_enabled: bool = True
    ve_gru: bool = True
    render_mode: str = "features"    # features | pixels
    conv_channels: tuple = (8, 16)
    dtype: str = "float32"
    seed: int = 0
    # training
    batch_size: int = 4
    epochs: int = 50
    base_lr: float = 1e-3
    warmup_epochs: int = 3
    weight_decay: float = 1e-4
    noise_augment: float = 0.1

    @property
    def embed_dim(self):
        return 2 * self.ve_hidden

    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


class F3EDModel:
    def __init__(self, config: F3EDConfig, taxonomy=None, rng=None):
        self.config = config
        self.taxonomy = taxonomy or load_taxonomy(config.taxonomy_name)
        self.g = self.taxonomy.granularity(config.granularity)
        tax = self.taxonomy
        self.K = tax.K

        # loss/decode mask for the elements inside the working granularity
        mask = np.zeros(tax.K)
        for i in self.g.ordered():
            sc = tax.subclass(i)
            for el in sc.elements:
                mask[tax.element(el, sc.index).global_index - 1] = 1.0
        self.element_mask = mask
        self.num_g_elements = int(mask.sum())

        self.class_list = None
        if config.head_mode == "multi-class":
            self.class_list = list(tax.event_types(self.g))
            self.class_index = {c: i + 1 for i, c in enumerate(self.class_list)}

        rng = rng or np.random.default_rng(config.seed)
        self.params = self._init_params(rng)

    def _init_params(self, rng):
        cfg = self.config
        dt = cfg.np_dtype()
        store = ParamStore()
        E = cfg.embed_dim
        if cfg.render_mode == "features":
            init_linear_params(store, "backbone.adapter.", cfg.input_dim, E, rng, dt)
            init_linear_params(store, "backbone.mix.", E, E, rng, dt)
        else:
            init_conv_backbone_params(store, "backbone.conv.", E, rng,
                                      cfg.conv_channels, dt)
        if cfg.ve_gru:
            init_bigru_params(store, "ve.gru.", E, cfg.ve_hidden, rng, dt)
        else:
            init_linear_params(store, "ve.proj.", E, E, rng, dt)
        if cfg.head_mode == "multi-class":
            init_linear_params(store, "mc.", E, len(self.class_list) + 1, rng, dt)
        else:
            init_linear_params(store, "lcl.", E, 1, rng, dt)
            init_linear_params(store, "mlc.", E, self.K, rng, dt)
            if cfg.ctx_enabled:
                init_bigru_params(store, "ctx.gru.", self.K + 1, cfg.ctx_hidden,
                                  rng, dt)
                init_linear_params(store, "ctx.head.", 2 * cfg.ctx_hidden,
                                   self.K, rng, dt)
                # the refiner corrects the visual logits; start close to
                # the identity so rare elements pass through untouched
                store["ctx.head.W"] = store["ctx.head.W"] * 0.1
        return store

    def calibrate_biases(self, fg_rate, element_rates):
        """Start the sigmoid heads at the label priors.

        Rare elements otherwise spend many epochs just dragging their bias
        toward the prior before the weights see a useful gradient."""
        def logit(p):
            p = np.clip(p, 1e-4, 1.0 - 1e-4)
            return np.log(p / (1.0 - p))

        dt = self.config.np_dtype()
        if "lcl.b" in self.params:
            self.params["lcl.b"] = np.full(1, logit(fg_rate), dtype=dt)
        rates = logit(np.asarray(element_rates))
        if "mlc.b" in self.params:
            self.params["mlc.b"] = rates.astype(dt)
        if "ctx.head.b" in self.params:
            self.params["ctx.head.b"] = rates.astype(dt)

    # ------------------------------------------------------------------
    # encoder

    def encode(self, x, lengths):
        """Backbone + VE: [B, L, ...] frames -> [B, L, E] embeddings."""
        cfg = self.config
        caches = {}
        if cfg.render_mode == "features":
            a_pre, caches["adapter"] = linear(x, self.params, "backbone.adapter.")
            a = np.tanh(a_pre)
            caches["a"] = a
            s, caches["shift"] = tsm_shift(a)
            m_pre, caches["mix"] = linear(s, self.params, "backbone.mix.")
            h = np.tanh(m_pre)
            caches["h"] = h
        else:
            # the temporal shift inside the convnet must stay within a
            # window, so each batch row runs separately
            outs, convcaches = [], []
            for b in range(x.shape[0]):
                y, cc = conv_backbone(x[b], self.params, "backbone.conv.",
                                      self.config.conv_channels)
                outs.append(np.tanh(y))
                convcaches.append(cc)
            h = np.stack(outs)
            caches["conv"] = convcaches
            caches["h"] = h
        if cfg.ve_gru:
            F, caches["gru"] = bigru(h, self.params, "ve.gru.", lengths=lengths)
        else:
            F_pre, caches["proj"] = linear(h, self.params, "ve.proj.")
            F = np.tanh(F_pre)
            caches["F_act"] = F
        caches["F"] = F
        return F, caches

    def encode_backward(self, dF, caches):
        cfg = self.config
        if cfg.ve_gru:
            dh = bigru_backward(dF, caches["gru"], self.params)
        else:
            F = caches["F_act"]
            dh = linear_backward(dF * (1.0 - F * F), caches["proj"], self.params)
        h = caches["h"]
        dh = dh * (1.0 - h * h)
        if cfg.render_mode == "features":
            ds = linear_backward(dh, caches["mix"], self.params)
            da = tsm_shift_backward(ds, caches["shift"])
            a = caches["a"]
            da = da * (1.0 - a * a)
            return linear_backward(da, caches["adapter"], self.params)
        for b, cc in enumerate(caches["conv"]):
            conv_backbone_backward(dh[b], cc, self.params)
        return None

    # ------------------------------------------------------------------
    # heads

    def localize(self, F):
        """Per-frame event probabilities [B, L]."""
        logit, cache = linear(F, self.params, "lcl.")
        p = sigmoid(logit[..., 0])
        return p, (logit, cache, p)

    def classify(self, F, win_idx, positions):
        """Element logits and probabilities at (window, position) rows."""
        rows = F[win_idx, positions]
        logit, cache = linear(rows, self.params, "mlc.")
        e_hat = sigmoid(logit)
        return e_hat, logit, (cache, e_hat)

    def refine(self, e_logit, e_hat, confidences, seq_lengths, order):
        """CTX pass over per-window event sequences.

        The refiner is a residual corrector: a bidirectional GRU reads the
        sequence of visual probabilities plus localizer confidence, and its
        head output is added to the visual logits before the sigmoid, so
        an untrained refiner passes the classifier through unchanged.
        `order` maps flat event index -> (window row, slot in sequence).
        """
        B = len(seq_lengths)
        Mmax = max(seq_lengths) if B else 0
        u = np.zeros((B, Mmax, self.K + 1), dtype=e_hat.dtype)
        for flat, (b, slot) in enumerate(order):
            u[b, slot, :self.K] = e_hat[flat]
            u[b, slot, self.K] = confidences[flat]
        feats, gru_cache = bigru(u, self.params, "ctx.gru.",
                                 lengths=np.asarray(seq_lengths))
        corr, head_cache = linear(feats, self.params, "ctx.head.")
        grid_logit = np.array(corr)
        for flat, (b, slot) in enumerate(order):
            grid_logit[b, slot] += e_logit[flat]
        refined_grid = sigmoid(grid_logit)
        refined = np.stack([refined_grid[b, slot] for b, slot in order]) \
            if order else np.zeros((0, self.K), dtype=e_hat.dtype)
        return refined, (gru_cache, head_cache, refined_grid, order, u.shape)

    # ------------------------------------------------------------------
    # composite training step

    def forward_backward(self, batch, accumulate=True):
        """Teacher-forced forward pass and, optionally, the full backward
        pass.  Returns a dict of losses; gradients land in `params.grads`.
        """
        cfg = self.config
        x = batch["x"]
        valid = batch["valid"]
        lengths = batch["lengths"]
        F, enc_cache = self.encode(x, lengths)

        if cfg.head_mode == "multi-class":
            return self._forward_backward_multiclass(batch, F, enc_cache,
                                                     accumulate)

        p, (p_logit, lcl_cache, _) = self.localize(F)
        loss_lcl, dp = weighted_bce(p, batch["fg"], cfg.fg_weight, mask=valid)

        win_idx, positions, order, seq_lengths = batch["events"]
        M = len(win_idx)
        losses = {"lcl": loss_lcl, "mlc": 0.0, "ctx": 0.0}
        d_ehat = None
        refine_cache = None
        e_cache = None
        if M:
            targets = batch["el"][win_idx, positions]
            e_hat, e_logit, e_cache = self.classify(F, win_idx, positions)
            # the mask sums to one, so the masked mean in weighted_bce is
            # exactly the two-level mean: events first, then the elements
            # of the working granularity
            w = np.broadcast_to(self.element_mask / (self.num_g_elements * M),
                                e_hat.shape)
            loss_mlc, d_ehat = weighted_bce(e_hat, targets, 1.0, mask=w)
            losses["mlc"] = loss_mlc

            if cfg.ctx_enabled:
                conf = p[win_idx, positions]
                refined, refine_cache = self.refine(e_logit, e_hat, conf,
                                                    seq_lengths, order)
                loss_ctx, d_ref = weighted_bce(refined, targets, 1.0, mask=w)
                losses["ctx"] = loss_ctx

        losses["total"] = losses["lcl"] + losses["mlc"] + losses["ctx"]
        if not accumulate:
            return losses

        dF = np.zeros_like(F)
        dp_total = np.array(dp)
        if M:
            d_ehat_total = d_ehat
            d_elogit_residual = 0.0
            if cfg.ctx_enabled:
                gru_cache, head_cache, refined_grid, order_, u_shape = refine_cache
                d_grid = np.zeros(refined_grid.shape, dtype=refined_grid.dtype)
                for flat, (b, slot) in enumerate(order_):
                    d_grid[b, slot] = d_ref[flat]
                d_glogit = (d_grid * refined_grid * (1.0 - refined_grid)).astype(F.dtype)
                d_feats = linear_backward(d_glogit, head_cache, self.params)
                du = bigru_backward(d_feats, gru_cache, self.params)
                d_ehat_ctx = np.zeros_like(d_ehat_total)
                d_elogit_residual = np.zeros((M, self.K), dtype=F.dtype)
                for flat, (b, slot) in enumerate(order_):
                    d_ehat_ctx[flat] = du[b, slot, :self.K]
                    d_elogit_residual[flat] = d_glogit[b, slot]
                    dp_total[win_idx[flat], positions[flat]] += du[b, slot, self.K]
                d_ehat_total = d_ehat_total + d_ehat_ctx
            mlc_cache, e_hat = e_cache
            d_elogit = (d_ehat_total * e_hat * (1.0 - e_hat)).astype(F.dtype) \
                + d_elogit_residual
            d_rows = linear_backward(d_elogit, mlc_cache, self.params)
            np.add.at(dF, (win_idx, positions), d_rows)

        p_sig = sigmoid(p_logit[..., 0])
        d_plogit = (dp_total * p_sig * (1.0 - p_sig)).astype(F.dtype)[..., None]
        dF += linear_backward(d_plogit, lcl_cache, self.params)
        self.encode_backward(dF, enc_cache)
        return losses

    def _forward_backward_multiclass(self, batch, F, enc_cache, accumulate):
        cfg = self.config
        logits, cache = linear(F, self.params, "mc.")
        weights = np.ones(len(self.class_list) + 1)
        weights[1:] = cfg.fg_weight
        loss, dlogits = softmax_cross_entropy(
            logits, batch["cls"], class_weights=weights, mask=batch["valid"])
        losses = {"lcl": 0.0, "mlc": loss, "ctx": 0.0, "total": loss}
        if accumulate:
            dF = linear_backward(dlogits.astype(F.dtype), cache, self.params)
            self.encode_backward(dF, enc_cache)
        return losses

    # ------------------------------------------------------------------
    # inference-time pieces (no gradients)

    def frame_scores(self, x, lengths):
        """Encoder + per-frame scores for inference.

        Multi-label mode returns (F, event probabilities [B, L]);
        multi-class mode returns (F, class probabilities [B, L, C + 1])."""
        F, _ = self.encode(x, lengths)
        if self.config.head_mode == "multi-class":
            logits, _ = linear(F, self.params, "mc.")
            shifted = logits - logits.max(axis=-1, keepdims=True)
            e = np.exp(shifted)
            return F, e / e.sum(axis=-1, keepdims=True)
        p, _ = self.localize(F)
        return F, p

    def element_scores(self, rows):
        """(probabilities, logits) of the classifier head at given rows."""
        logit, _ = linear(rows, self.params, "mlc.")
        return sigmoid(logit), logit

    def refine_sequence(self, e_logit, e_hat, confidences):
        """CTX over one assembled clip sequence (inference path)."""
        if not self.config.ctx_enabled or len(e_hat) == 0:
            return np.asarray(e_hat)
        M = len(e_hat)
        order = [(0, i) for i in range(M)]
        refined, _ = self.refine(np.asarray(e_logit), np.asarray(e_hat),
                                 np.asarray(confidences), [M], order)
        return refined
