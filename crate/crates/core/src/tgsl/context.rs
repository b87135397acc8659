use numcore::{Bound, Real, Tape, Tensor, Var};

use super::{EdgeEmbeddings, TgslModel};
use crate::error::{Error, Result};
use crate::tgraph::EventId;

impl TgslModel {
    /// Final hidden state of a single-layer LSTM run over each sequence of
    /// edge embeddings (oldest first), `seqs.len() x edge_dim`. Empty
    /// sequences yield the zero initial state; sequences longer than
    /// `n_rnn` keep only their last `n_rnn` entries.
    ///
    /// Sequences are right-aligned and processed longest first, so at every
    /// step the rows still being updated form a prefix of the state matrix.
    pub fn context_predict<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, emb: &EdgeEmbeddings, seqs: &[Vec<EventId>]) -> Result<Var> {
        let d = self.cfg.edge_dim;
        let n = seqs.len();
        let seqs: Vec<&[EventId]> = seqs.iter().map(|s| &s[s.len().saturating_sub(self.cfg.n_rnn)..]).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(seqs[i].len()));
        let max_len = order.first().map_or(0, |&i| seqs[i].len());
        let mut h = tape.constant(Tensor::zeros(n, d));
        let mut c = tape.constant(Tensor::zeros(n, d));
        for step in 0..max_len {
            let active = order.iter().take_while(|&&i| seqs[i].len() >= max_len - step).count();
            let mut rows = Vec::with_capacity(active);
            for &i in &order[..active] {
                let s = seqs[i];
                let e = s[s.len() + step - max_len];
                rows.push(emb.row(e).ok_or_else(|| Error::Config(format!("event {e} has no edge embedding")))?);
            }
            let x = tape.gather_rows(emb.var, &rows)?;
            let h_a = tape.slice_rows(h, 0, active)?;
            let c_a = tape.slice_rows(c, 0, active)?;
            let xw = tape.matmul(x, p[self.lstm.wx])?;
            let hw = tape.matmul(h_a, p[self.lstm.wh])?;
            let gates = tape.add(xw, hw)?;
            let gates = tape.add_row(gates, p[self.lstm.b])?;
            let i_g = tape.slice_cols(gates, 0, d)?;
            let i_g = tape.sigmoid(i_g)?;
            let f_g = tape.slice_cols(gates, d, d)?;
            let f_g = tape.sigmoid(f_g)?;
            let g_g = tape.slice_cols(gates, 2 * d, d)?;
            let g_g = tape.tanh(g_g)?;
            let o_g = tape.slice_cols(gates, 3 * d, d)?;
            let o_g = tape.sigmoid(o_g)?;
            let fc = tape.mul(f_g, c_a)?;
            let ig = tape.mul(i_g, g_g)?;
            let c_new = tape.add(fc, ig)?;
            let tc = tape.tanh(c_new)?;
            let h_new = tape.mul(o_g, tc)?;
            if active < n {
                let h_rest = tape.slice_rows(h, active, n - active)?;
                let c_rest = tape.slice_rows(c, active, n - active)?;
                h = tape.concat_rows(&[h_new, h_rest])?;
                c = tape.concat_rows(&[c_new, c_rest])?;
            } else {
                h = h_new;
                c = c_new;
            }
        }
        if max_len == 0 {
            return Ok(h);
        }
        let mut inverse = vec![0; n];
        for (sorted_pos, &i) in order.iter().enumerate() {
            inverse[i] = sorted_pos;
        }
        Ok(tape.gather_rows(h, &inverse)?)
    }
}
