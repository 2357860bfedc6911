//! Porter stemmer (1980), following the canonical ANSI C reference including
//! its two documented departures from the published paper (`logi` → `log`,
//! `bli` → `ble`).
//!
//! Operates on lowercase ASCII; non-ASCII input is passed through unchanged.

/// Stems one lowercase word. Words shorter than 3 characters are returned
/// unchanged, as in the reference implementation.
pub fn porter_stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut s = Stemmer {
        b: word.as_bytes().to_vec(),
    };
    s.step1ab();
    s.step1c();
    s.step2();
    s.step3();
    s.step4();
    s.step5();
    String::from_utf8(s.b).expect("ascii in, ascii out")
}

struct Stemmer {
    b: Vec<u8>,
}

impl Stemmer {
    fn is_consonant(&self, i: usize) -> bool {
        match self.b[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => {
                if i == 0 {
                    true
                } else {
                    !self.is_consonant(i - 1)
                }
            }
            _ => true,
        }
    }

    /// Measure of the stem `b[..k]`: the number of VC sequences in
    /// `[C](VC)^m[V]`.
    fn measure(&self, k: usize) -> usize {
        let mut n = 0;
        let mut i = 0;
        // skip initial consonants
        while i < k && self.is_consonant(i) {
            i += 1;
        }
        loop {
            // skip vowels
            while i < k && !self.is_consonant(i) {
                i += 1;
            }
            if i >= k {
                return n;
            }
            n += 1;
            while i < k && self.is_consonant(i) {
                i += 1;
            }
            if i >= k {
                return n;
            }
        }
    }

    fn has_vowel(&self, k: usize) -> bool {
        (0..k).any(|i| !self.is_consonant(i))
    }

    fn double_consonant(&self, k: usize) -> bool {
        k >= 2 && self.b[k - 1] == self.b[k - 2] && self.is_consonant(k - 1)
    }

    /// cvc at positions k-3..k-1 where the final consonant is not w, x, or y.
    fn cvc(&self, k: usize) -> bool {
        if k < 3 || !self.is_consonant(k - 3) || self.is_consonant(k - 2) || !self.is_consonant(k - 1)
        {
            return false;
        }
        !matches!(self.b[k - 1], b'w' | b'x' | b'y')
    }

    fn ends(&self, suffix: &[u8]) -> bool {
        self.b.len() >= suffix.len() && self.b.ends_with(suffix)
    }

    fn stem_len(&self, suffix: &[u8]) -> usize {
        self.b.len() - suffix.len()
    }

    fn replace(&mut self, suffix: &[u8], with: &[u8]) {
        let k = self.stem_len(suffix);
        self.b.truncate(k);
        self.b.extend_from_slice(with);
    }

    fn step1ab(&mut self) {
        if self.ends(b"sses") {
            self.replace(b"sses", b"ss");
        } else if self.ends(b"ies") {
            self.replace(b"ies", b"i");
        } else if !self.ends(b"ss") && self.ends(b"s") {
            self.b.pop();
        }

        let mut fixup = false;
        if self.ends(b"eed") {
            if self.measure(self.stem_len(b"eed")) > 0 {
                self.b.pop();
            }
        } else if self.ends(b"ed") && self.has_vowel(self.stem_len(b"ed")) {
            self.b.truncate(self.b.len() - 2);
            fixup = true;
        } else if self.ends(b"ing") && self.has_vowel(self.stem_len(b"ing")) {
            self.b.truncate(self.b.len() - 3);
            fixup = true;
        }

        if fixup {
            if self.ends(b"at") || self.ends(b"bl") || self.ends(b"iz") {
                self.b.push(b'e');
            } else if self.double_consonant(self.b.len()) {
                if !matches!(self.b[self.b.len() - 1], b'l' | b's' | b'z') {
                    self.b.pop();
                }
            } else if self.measure(self.b.len()) == 1 && self.cvc(self.b.len()) {
                self.b.push(b'e');
            }
        }
    }

    fn step1c(&mut self) {
        if self.ends(b"y") && self.has_vowel(self.b.len() - 1) {
            let n = self.b.len();
            self.b[n - 1] = b'i';
        }
    }

    fn rule(&mut self, suffix: &[u8], with: &[u8], min_measure: usize) -> bool {
        if self.ends(suffix) && self.measure(self.stem_len(suffix)) > min_measure {
            self.replace(suffix, with);
            true
        } else {
            false
        }
    }

    fn step2(&mut self) {
        let rules: &[(&[u8], &[u8])] = &[
            (b"ational", b"ate"),
            (b"tional", b"tion"),
            (b"enci", b"ence"),
            (b"anci", b"ance"),
            (b"izer", b"ize"),
            (b"bli", b"ble"),
            (b"alli", b"al"),
            (b"entli", b"ent"),
            (b"eli", b"e"),
            (b"ousli", b"ous"),
            (b"ization", b"ize"),
            (b"ation", b"ate"),
            (b"ator", b"ate"),
            (b"alism", b"al"),
            (b"iveness", b"ive"),
            (b"fulness", b"ful"),
            (b"ousness", b"ous"),
            (b"aliti", b"al"),
            (b"iviti", b"ive"),
            (b"biliti", b"ble"),
            (b"logi", b"log"),
        ];
        for (suffix, with) in rules {
            if self.ends(suffix) {
                self.rule(suffix, with, 0);
                return;
            }
        }
    }

    fn step3(&mut self) {
        let rules: &[(&[u8], &[u8])] = &[
            (b"icate", b"ic"),
            (b"ative", b""),
            (b"alize", b"al"),
            (b"iciti", b"ic"),
            (b"ical", b"ic"),
            (b"ful", b""),
            (b"ness", b""),
        ];
        for (suffix, with) in rules {
            if self.ends(suffix) {
                self.rule(suffix, with, 0);
                return;
            }
        }
    }

    fn step4(&mut self) {
        let suffixes: &[&[u8]] = &[
            b"al", b"ance", b"ence", b"er", b"ic", b"able", b"ible", b"ant", b"ement", b"ment",
            b"ent", b"ion", b"ou", b"ism", b"ate", b"iti", b"ous", b"ive", b"ize",
        ];
        for suffix in suffixes {
            if self.ends(suffix) {
                let k = self.stem_len(suffix);
                if *suffix == b"ion" && !(k >= 1 && matches!(self.b[k - 1], b's' | b't')) {
                    return;
                }
                if self.measure(k) > 1 {
                    self.b.truncate(k);
                }
                return;
            }
        }
    }

    fn step5(&mut self) {
        // 5a
        if self.ends(b"e") {
            let k = self.b.len() - 1;
            let m = self.measure(k);
            if m > 1 || (m == 1 && !self.cvc(k)) {
                self.b.pop();
            }
        }
        // 5b
        let k = self.b.len();
        if k >= 2 && self.b[k - 1] == b'l' && self.double_consonant(k) && self.measure(k) > 1 {
            self.b.pop();
        }
    }
}

/// Lowercases and splits on non-alphanumeric characters, dropping empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Tokenizes and stems, preserving token order (duplicates kept).
pub fn stem_tokens(text: &str) -> Vec<String> {
    tokenize(text).iter().map(|t| porter_stem(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_stems() {
        let cases = [
            ("caresses", "caress"),
            ("ponies", "poni"),
            ("ties", "ti"),
            ("caress", "caress"),
            ("cats", "cat"),
            ("agreed", "agre"),
            ("feed", "feed"),
            ("plastered", "plaster"),
            ("motoring", "motor"),
            ("hopping", "hop"),
            ("hoping", "hope"),
            ("sky", "sky"),
            ("happy", "happi"),
            ("relational", "relat"),
            ("conditional", "condit"),
            ("digitizer", "digit"),
            ("operator", "oper"),
            ("feudalism", "feudal"),
            ("effective", "effect"),
            ("electricity", "electr"),
            ("hopefulness", "hope"),
            ("goodness", "good"),
            ("formalize", "formal"),
            ("adjustment", "adjust"),
            ("adoption", "adopt"),
            ("generalization", "gener"),
            ("oscillators", "oscil"),
            ("controlling", "control"),
            ("eating", "eat"),
            ("cities", "citi"),
            ("visiting", "visit"),
            ("visit", "visit"),
        ];
        for (input, expected) in cases {
            assert_eq!(porter_stem(input), expected, "stem of {input:?}");
        }
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumeric() {
        assert_eq!(
            tokenize("Visit the Citi, twice!"),
            vec!["visit", "the", "citi", "twice"]
        );
        assert_eq!(tokenize("  --  "), Vec::<String>::new());
    }

    #[test]
    fn short_words_pass_through() {
        assert_eq!(porter_stem("is"), "is");
        assert_eq!(porter_stem("a"), "a");
    }
}
