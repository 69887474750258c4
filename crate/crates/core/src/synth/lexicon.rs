use std::io::BufRead;

use crate::error::{Error, Result};

const DEFAULT_CAPTIONS: [&str; 20] = [
    "[whispers]",
    "[sighs]",
    "[laughs]",
    "[chuckles]",
    "[gasps]",
    "[coughs]",
    "[screams]",
    "[sobs]",
    "[groans]",
    "[grunts]",
    "[panting]",
    "[sniffles]",
    "[clears throat]",
    "[door closes]",
    "[phone rings]",
    "[music playing]",
    "[applause]",
    "[indistinct chatter]",
    "[loudly]",
    "[silence]",
];

/// Bracketed non-speech captions such as `[whispers]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionLexicon {
    captions: Vec<String>,
}

impl CaptionLexicon {
    pub fn new<I, S>(captions: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let captions: Vec<String> = captions.into_iter().map(Into::into).collect();
        if captions.is_empty() {
            return Err(Error::EmptyLexicon);
        }
        for c in &captions {
            let inner = c.strip_prefix('[').and_then(|c| c.strip_suffix(']'));
            if !inner.is_some_and(|i| !i.trim().is_empty()) {
                return Err(Error::InvalidCaption(c.clone()));
            }
        }
        Ok(CaptionLexicon { captions })
    }

    /// One caption per line; blank lines are skipped.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut captions = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if !line.is_empty() {
                captions.push(line.to_string());
            }
        }
        Self::new(captions)
    }

    pub fn captions(&self) -> &[String] {
        &self.captions
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }
}

impl Default for CaptionLexicon {
    fn default() -> Self {
        CaptionLexicon {
            captions: DEFAULT_CAPTIONS.iter().map(|c| c.to_string()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert_eq!(CaptionLexicon::default().len(), 20);
        assert!(CaptionLexicon::default().captions().iter().all(|c| CaptionLexicon::new([c.as_str()]).is_ok()));
        assert!(matches!(CaptionLexicon::new(Vec::<String>::new()), Err(Error::EmptyLexicon)));
        assert!(matches!(CaptionLexicon::new(["whispers"]), Err(Error::InvalidCaption(_))));
        assert!(matches!(CaptionLexicon::new(["[ ]"]), Err(Error::InvalidCaption(_))));
        let read = CaptionLexicon::read("[a]\n\n [b] \n".as_bytes()).unwrap();
        assert_eq!(read.captions(), ["[a]", "[b]"]);
    }
}
