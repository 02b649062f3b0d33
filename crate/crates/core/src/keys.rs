//! The 36-key class space: digits 0-9 then letters a-z.

use serde::{Deserialize, Serialize};

/// Number of key classes.
pub const N_KEYS: usize = 36;

/// A key class index in `[0, 36)`. Classes 0-9 are the digit row, 10-35 map
/// to letters a-z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyClass(pub u8);

impl KeyClass {
    pub fn new(index: u8) -> Option<Self> {
        (usize::from(index) < N_KEYS).then_some(KeyClass(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// The character this class represents.
    pub fn to_char(self) -> char {
        match self.0 {
            0..=9 => (b'0' + self.0) as char,
            _ => (b'a' + self.0 - 10) as char,
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '0'..='9' => Some(KeyClass(c as u8 - b'0')),
            'a'..='z' => Some(KeyClass(c as u8 - b'a' + 10)),
            _ => None,
        }
    }

    /// All 36 classes in index order.
    pub fn all() -> impl Iterator<Item = KeyClass> {
        (0..N_KEYS as u8).map(KeyClass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_round_trip_covers_all_classes() {
        for k in KeyClass::all() {
            assert_eq!(KeyClass::from_char(k.to_char()), Some(k));
        }
        assert_eq!(KeyClass::from_char('0'), Some(KeyClass(0)));
        assert_eq!(KeyClass::from_char('a'), Some(KeyClass(10)));
        assert_eq!(KeyClass::from_char('z'), Some(KeyClass(35)));
        assert_eq!(KeyClass::from_char('!'), None);
        assert_eq!(KeyClass::new(36), None);
    }
}
