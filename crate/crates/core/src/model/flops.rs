use super::ModelConfig;

/// Floating-point operations for one evaluation-mode forward pass over a
/// single window, counting a multiply-add as two operations. Element-wise
/// work (activations, normalization, softmax) is included at one operation
/// per element per pass.
pub fn forward_flops(cfg: &ModelConfig) -> u64 {
    let w = cfg.window as u64;
    let c = cfg.n_channels as u64;
    let d = cfg.d_model as u64;
    let f = cfg.ffn_dim as u64;
    let mac = |rows: u64, inner: u64, cols: u64| 2 * rows * inner * cols;

    let mut total = 0;
    if cfg.use_mask {
        let hm = cfg.mask_hidden as u64;
        total += 2 * c * w; // pooling
        total += mac(2, c, hm) + mac(2, hm, c) + c * w;
    }
    total += mac(w, c, d);
    if cfg.use_film {
        let hf = cfg.film_hidden as u64;
        let bio = cfg.bio_dim as u64;
        total += mac(1, bio, hf) + mac(1, hf, 2 * d) + 2 * w * d;
    }
    total += w * d; // positional table

    let per_layer = 2 * 5 * w * d // two normalizations
        + 4 * mac(w, d, d) // q, k, v, output projections
        + 2 * mac(w, d, w) // scores and weighted values
        + 3 * cfg.n_heads as u64 * w * w // softmax
        + mac(w, d, f)
        + mac(w, f, d)
        + w * f // relu
        + 2 * w * d; // residuals
    total += cfg.n_layers as u64 * per_layer;

    let hh = cfg.head_hidden as u64;
    let m = cfg.n_muscles as u64;
    total += mac(w, d, hh) + mac(w, hh, m) + w * (hh + m);
    total
}
