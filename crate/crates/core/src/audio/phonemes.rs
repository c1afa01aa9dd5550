//! Phoneme vocabulary, a small pronunciation lexicon and text tokenization.
//!
//! Ids are dense from 0. Id 0 is padding, id 1 the word boundary `_`, then
//! punctuation marks, the 39 ARPAbet phones without stress digits, and
//! lowercase letters used to spell words missing from the lexicon.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const PAD: &str = "<pad>";
pub const WORD_BOUNDARY: &str = "_";
pub const PUNCTUATION: [&str; 11] = [".", ",", "?", "!", ";", ":", "-", "'", "\"", "(", ")"];

pub const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH",
    "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
];

const LEXICON: &str = "\
a AH|about AH B AW T|after AE F T ER|again AH G EH N|against AH G EH N S T|air EH R|all AO L|also AO L S OW|\
am AE M|america AH M EH R AH K AH|an AE N|and AH N D|animal AE N AH M AH L|another AH N AH DH ER|answer AE N S ER|\
any EH N IY|are AA R|around ER AW N D|art AA R T|as AE Z|ask AE S K|at AE T|audio AA D IY OW|away AH W EY|\
back B AE K|be B IY|because B IH K AO Z|been B IH N|before B IH F AO R|between B IH T W IY N|big B IH G|\
boy B OY|brown B R AW N|building B IH L D IH NG|but B AH T|by B AY|call K AO L|came K EY M|can K AE N|car K AA R|\
change CH EY N JH|city S IH T IY|come K AH M|commission K AH M IH SH AH N|convolutional K AA N V AH L UW SH AH N AH L|\
could K UH D|day D EY|did D IH D|different D IH F ER AH N T|do D UW|does D AH Z|dog D AO G|down D AW N|\
during D UH R IH NG|each IY CH|eight EY T|end EH N D|even IY V IH N|fast F AE S T|find F AY N D|first F ER S T|\
five F AY V|follow F AA L OW|for F AO R|form F AO R M|found F AW N D|four F AO R|fox F AA K S|from F R AH M|\
get G EH T|give G IH V|go G OW|good G UH D|government G AH V ER M AH N T|great G R EY T|had HH AE D|hand HH AE N D|\
has HH AE Z|have HH AE V|he HH IY|hello HH AH L OW|help HH EH L P|her HH ER|here HH IY R|him HH IH M|his HH IH Z|\
home HH OW M|house HH AW S|how HH AW|i AY|if IH F|in IH N|into IH N T UW|is IH Z|it IH T|its IH T S|\
jumps JH AH M P S|just JH AH S T|kind K AY N D|know N OW|land L AE N D|large L AA R JH|last L AE S T|\
lazy L EY Z IY|learn L ER N|left L EH F T|letter L EH T ER|like L AY K|line L AY N|little L IH T AH L|\
live L IH V|long L AO NG|look L UH K|made M EY D|make M EY K|man M AE N|many M EH N IY|may M EY|me M IY|\
mean M IY N|men M EH N|model M AA D AH L|more M AO R|morning M AO R N IH NG|most M OW S T|mother M AH DH ER|\
move M UW V|much M AH CH|must M AH S T|my M AY|name N EY M|need N IY D|network N EH T W ER K|new N UW|\
night N AY T|nine N AY N|no N OW|not N AA T|now N AW|number N AH M B ER|of AH V|off AO F|oil OY L|old OW L D|\
on AA N|one W AH N|only OW N L IY|or AO R|other AH DH ER|our AW ER|out AW T|over OW V ER|page P EY JH|\
part P AA R T|people P IY P AH L|picture P IH K CH ER|place P L EY S|play P L EY|point P OY N T|\
police P AH L IY S|president P R EH Z AH D AH N T|printing P R IH N T IH NG|put P UH T|quick K W IH K|\
read R IY D|report R IH P AO R T|right R AY T|said S EH D|same S EY M|say S EY|see S IY|sentence S EH N T AH N S|\
set S EH T|seven S EH V AH N|she SH IY|shot SH AA T|should SH UH D|show SH OW|six S IH K S|slow S L OW|\
small S M AO L|so S OW|some S AH M|sound S AW N D|speech S P IY CH|spell S P EH L|state S T EY T|still S T IH L|\
street S T R IY T|study S T AH D IY|such S AH CH|synthesis S IH N TH AH S AH S|take T EY K|tell T EH L|\
ten T EH N|test T EH S T|text T EH K S T|than DH AE N|thank TH AE NG K|that DH AE T|the DH AH|their DH EH R|\
them DH EH M|then DH EH N|there DH EH R|these DH IY Z|they DH EY|thing TH IH NG|think TH IH NG K|this DH IH S|\
three TH R IY|through TH R UW|time T AY M|to T UW|too T UW|try T R AY|turn T ER N|two T UW|under AH N D ER|\
up AH P|us AH S|use Y UW Z|very V EH R IY|voice V OY S|want W AA N T|was W AA Z|water W AO T ER|way W EY|\
we W IY|well W EH L|went W EH N T|were W ER|what W AH T|when W EH N|where W EH R|which W IH CH|while W AY L|\
who HH UW|why W AY|will W IH L|window W IH N D OW|with W IH DH|word W ER D|work W ER K|world W ER L D|\
would W UH D|write R AY T|year Y IH R|yes Y EH S|you Y UW|your Y AO R|zero Z IH R OW";

/// Bundled pronunciation lexicon: lowercase word to phone symbols.
pub fn lexicon() -> &'static HashMap<&'static str, Vec<&'static str>> {
    static LEX: OnceLock<HashMap<&'static str, Vec<&'static str>>> = OnceLock::new();
    LEX.get_or_init(|| {
        LEXICON
            .split('|')
            .map(|entry| {
                let mut parts = entry.split_whitespace();
                let word = parts.next().expect("lexicon entry has a word");
                (word, parts.collect())
            })
            .collect()
    })
}

/// Bidirectional symbol/id map.
#[derive(Clone, Debug)]
pub struct PhonemeVocabulary {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for PhonemeVocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

impl PhonemeVocabulary {
    pub fn standard() -> Self {
        let mut symbols: Vec<String> = vec![PAD.into(), WORD_BOUNDARY.into()];
        symbols.extend(PUNCTUATION.iter().map(|s| s.to_string()));
        symbols.extend(ARPABET.iter().map(|s| s.to_string()));
        symbols.extend(('a'..='z').map(|c| c.to_string()));
        let ids = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { symbols, ids }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.symbol(i).unwrap_or("<unk>").to_string())
            .collect()
    }

    /// Parses explicit symbols separated by whitespace or `|`.
    ///
    /// Stress digits on phones (`AH0`, `OW1`) are dropped; any other
    /// unknown symbol is an error.
    pub fn parse_symbols(&self, text: &str) -> Result<Vec<usize>> {
        let ids = text
            .split(|c: char| c.is_whitespace() || c == '|')
            .filter(|s| !s.is_empty())
            .map(|raw| {
                let sym = raw.trim_end_matches(|c: char| c.is_ascii_digit());
                let sym = if sym.is_empty() { raw } else { sym };
                self.id(sym)
                    .filter(|&i| i != PAD_ID)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown phoneme symbol {raw:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(Error::InvalidArgument("phoneme input is empty".into()));
        }
        Ok(ids)
    }

    /// Tokenizes raw text through the lexicon.
    ///
    /// Punctuation in the vocabulary passes through as its own token, words
    /// are separated by `_`, words missing from the lexicon are spelled
    /// letter by letter, and characters that fit none of these are dropped.
    pub fn encode_text(&self, text: &str) -> Result<Vec<usize>> {
        let lex = lexicon();
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<usize>| {
            if word.is_empty() {
                return;
            }
            if out.iter().any(|&i| self.symbols[i].chars().all(|c| c.is_alphabetic())) {
                out.push(self.ids[WORD_BOUNDARY]);
            }
            match lex.get(word.as_str()) {
                Some(phones) => out.extend(phones.iter().map(|p| self.ids[*p])),
                None => out.extend(word.chars().filter_map(|c| self.id(&c.to_string()))),
            }
            word.clear();
        };
        for c in text.chars().flat_map(char::to_lowercase) {
            if c.is_ascii_lowercase() || (c == '\'' && !word.is_empty()) {
                word.push(c);
            } else {
                let trailing_apostrophe = word.ends_with('\'');
                if trailing_apostrophe {
                    word.pop();
                }
                flush(&mut word, &mut out);
                if trailing_apostrophe {
                    out.push(self.ids["'"]);
                }
                if let Some(id) = self.id(&c.to_string()).filter(|_| !c.is_alphanumeric()) {
                    out.push(id);
                }
            }
        }
        flush(&mut word, &mut out);
        if out.is_empty() {
            return Err(Error::InvalidArgument(format!("text {text:?} produced no phonemes")));
        }
        Ok(out)
    }
}
