use super::{Tape, TensorError, Var};

/// `x · weight + bias` for `x: [n, in]`, `weight: [in, out]`, `bias: [out]`.
pub fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
    let xw = tape.matmul(x, weight)?;
    tape.add(xw, bias)
}

/// One LSTM step with fused gate weights.
///
/// `weight` is `[in + hidden, 4 * hidden]` and `bias` is `[4 * hidden]`, gate
/// blocks ordered input, forget, candidate, output. Returns `(h', c')`.
pub fn lstm_cell(tape: &mut Tape, x: Var, h: Var, c: Var, weight: Var, bias: Var) -> Result<(Var, Var), TensorError> {
    let hidden = tape.shape(h)[1];
    if tape.shape(weight).get(1) != Some(&(4 * hidden)) {
        return Err(super::shape_err("lstm_cell", tape.shape(h), tape.shape(weight)));
    }
    let xh = tape.concat(&[x, h], 1)?;
    let gates = linear(tape, xh, weight, bias)?;
    let i = tape.slice(gates, 1, 0, hidden)?;
    let f = tape.slice(gates, 1, hidden, hidden)?;
    let g = tape.slice(gates, 1, 2 * hidden, hidden)?;
    let o = tape.slice(gates, 1, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}
