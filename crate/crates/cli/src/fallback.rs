use rccl::maskfill::{Candidate, FillModel};
use rccl::textproc::TokenId;
use rccl::{Error, Result};

/// Asks `primary` first and answers from `secondary` on transport failures.
pub struct Fallback<A, B> {
    primary: A,
    secondary: B,
}

impl<A, B> Fallback<A, B> {
    pub fn new(primary: A, secondary: B) -> Self {
        Fallback { primary, secondary }
    }
}

impl<A: FillModel, B: FillModel> FillModel for Fallback<A, B> {
    fn vocab_size(&self) -> usize {
        self.primary.vocab_size()
    }

    fn candidates(&self, context: &[TokenId], blanks: &[usize]) -> Result<Vec<Vec<Candidate>>> {
        match self.primary.candidates(context, blanks) {
            Err(Error::Transport(e)) => {
                log::warn!("fill service unavailable ({e}); using the n-gram filler");
                self.secondary.candidates(context, blanks)
            }
            other => other,
        }
    }
}
