/// Sequences embedded in a token array stored as `[outer, len, inner, D]`.
///
/// Each `(outer, inner)` pair is one sequence of `len` tokens whose
/// consecutive elements are `inner * D` apart. Spatial attention over frames
/// of `S` sites uses `{outer: B*F, len: S, inner: 1}`; temporal attention over
/// `F` frames at every site uses `{outer: B, len: F, inner: S}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

impl SeqLayout {
    pub fn single(len: usize) -> Self {
        Self {
            outer: 1,
            len,
            inner: 1,
        }
    }

    pub fn spatial(frames: usize, sites: usize) -> Self {
        Self {
            outer: frames,
            len: sites,
            inner: 1,
        }
    }

    pub fn temporal(batch: usize, frames: usize, sites: usize) -> Self {
        Self {
            outer: batch,
            len: frames,
            inner: sites,
        }
    }

    pub fn tokens(&self) -> usize {
        self.outer * self.len * self.inner
    }

    pub fn sequences(&self) -> usize {
        self.outer * self.inner
    }

    /// `(offset of token 0, stride between tokens)` of sequence `s`, in elements.
    pub fn seq(&self, s: usize, d: usize) -> (usize, usize) {
        let (o, i) = (s / self.inner, s % self.inner);
        ((o * self.len * self.inner + i) * d, self.inner * d)
    }

    /// Same sequences with the token order reversed is not a layout change;
    /// this helper maps a token index to its mirror within its sequence.
    pub fn mirror_index(&self, token: usize) -> usize {
        let i = token % self.inner;
        let t = (token / self.inner) % self.len;
        let o = token / (self.inner * self.len);
        (o * self.len + (self.len - 1 - t)) * self.inner + i
    }
}

/// Per-frame spatial grid of tokens stored as `[frames, h, w, D]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameGrid {
    pub frames: usize,
    pub h: usize,
    pub w: usize,
}

impl FrameGrid {
    pub fn tokens(&self) -> usize {
        self.frames * self.h * self.w
    }
}
