//! Small suffix-stripping stemmer.
//!
//! Rules, applied repeatedly until the word stops changing:
//!
//! 1. `sses -> ss`, `ies -> i`, `ss` stays, and a final `s` is dropped when the
//!    letter before it is a consonant and the rest contains a vowel.
//! 2. `eed` stays; otherwise `ing` or `ed` is removed when the remaining stem
//!    contains a vowel. The stem is then repaired: `at`, `bl` and `iz` get an
//!    `e`; a doubled final consonant other than `l`, `s`, `z` is undoubled; a
//!    three-letter consonant-vowel-consonant stem not ending in `w`, `x`, `y`
//!    gets an `e`.
//!
//! Words of three characters or fewer are never changed.

fn is_vowel(chars: &[char], i: usize) -> bool {
    match chars[i] {
        'a' | 'e' | 'i' | 'o' | 'u' => true,
        'y' => i > 0 && !is_vowel(chars, i - 1),
        _ => false,
    }
}

fn has_vowel(chars: &[char]) -> bool {
    (0..chars.len()).any(|i| is_vowel(chars, i))
}

fn is_consonant(chars: &[char], i: usize) -> bool {
    chars[i].is_alphabetic() && !is_vowel(chars, i)
}

fn ends_with(chars: &[char], suffix: &str) -> bool {
    let s: Vec<char> = suffix.chars().collect();
    chars.len() >= s.len() && chars[chars.len() - s.len()..] == s[..]
}

fn strip_plural(w: &mut Vec<char>) {
    let n = w.len();
    if ends_with(w, "sses") || ends_with(w, "ies") {
        w.truncate(n - 2);
    } else if ends_with(w, "ss") {
    } else if ends_with(w, "s") && n >= 2 && is_consonant(w, n - 2) && has_vowel(&w[..n - 1]) {
        w.truncate(n - 1);
    }
}

fn strip_verbal(w: &mut Vec<char>) {
    if ends_with(w, "eed") {
        return;
    }
    let cut = if ends_with(w, "ing") {
        3
    } else if ends_with(w, "ed") {
        2
    } else {
        return;
    };
    let stem_len = w.len() - cut;
    if stem_len == 0 || !has_vowel(&w[..stem_len]) {
        return;
    }
    w.truncate(stem_len);
    let n = w.len();
    if ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz") {
        w.push('e');
    } else if n >= 2
        && w[n - 1] == w[n - 2]
        && is_consonant(w, n - 1)
        && !matches!(w[n - 1], 'l' | 's' | 'z')
    {
        w.truncate(n - 1);
    } else if n == 3
        && is_consonant(w, 0)
        && is_vowel(w, 1)
        && is_consonant(w, 2)
        && !matches!(w[2], 'w' | 'x' | 'y')
    {
        w.push('e');
    }
}

/// Stem of a lowercased token.
pub fn stem(token: &str) -> String {
    let mut w: Vec<char> = token.chars().collect();
    if w.len() <= 3 {
        return token.to_owned();
    }
    loop {
        let before = w.clone();
        if w.len() > 3 {
            strip_plural(&mut w);
        }
        if w.len() > 3 {
            strip_verbal(&mut w);
        }
        if w == before {
            break;
        }
    }
    w.into_iter().collect()
}
