use super::forward::{argmax, Model};
use crate::cache::KvCache;
use crate::error::{Error, Result};
use crate::precision::Scalar;

/// Greedy decoding on top of a filled cache.
///
/// `last_logits` are the logits of the final prompt token; `next_position`
/// is the absolute position the first generated token will occupy. Each
/// generated token except the last is fed back as a one-token chunk, appended
/// to `cache` and passed through the cache policy. Stops early when `stop` is
/// produced (the stop token is not returned).
pub fn greedy_decode<T: Scalar>(
    model: &Model<T>,
    cache: &mut KvCache<T>,
    last_logits: &[T],
    next_position: usize,
    max_new: usize,
    stop: Option<u32>,
) -> Result<Vec<u32>> {
    if cache.is_empty() {
        return Err(Error::Empty("decode cache"));
    }
    let mut out = Vec::with_capacity(max_new);
    if max_new == 0 {
        return Ok(out);
    }
    let mut logits = last_logits.to_vec();
    let mut position = next_position;
    loop {
        let token = argmax(&logits);
        if Some(token) == stop {
            break;
        }
        out.push(token);
        if out.len() == max_new {
            break;
        }
        let step = if cache.policy().needs_attention_mass() {
            model.forward_chunk_with_mass(&[token], cache.layers(), position)?
        } else {
            model.forward_chunk(&[token], cache.layers(), position)?
        };
        cache.append(step.new_kv)?;
        if let Some(mass) = step.attention_mass {
            cache.record_attention_mass(&mass)?;
        }
        cache.apply_policy()?;
        logits = step.logits.row(0).to_vec();
        position += 1;
    }
    Ok(out)
}
