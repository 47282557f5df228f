//! Tag-name normalization and version ordering.

use std::cmp::Ordering;

/// Canonical version key for a tag name: lowercased, with any alphabetic
/// prefix ending in `-`, `_`, `/` or `v` removed, and `_` separators read as
/// dots when the name has no dots at all (`curl-7_69_1` becomes `7.69.1`).
/// Names without digits are only lowercased. The mapping is idempotent.
pub fn normalize_version(raw: &str) -> String {
    let mut s = raw.trim().to_ascii_lowercase();
    if let Some(rest) = s.strip_prefix("refs/tags/") {
        s = rest.to_string();
    }
    let Some(first_digit) = s.find(|c: char| c.is_ascii_digit()) else {
        return s;
    };
    if first_digit > 0 {
        let prefix = &s[..first_digit];
        let last = prefix.chars().last().unwrap();
        if matches!(last, '-' | '_' | '/' | 'v' | '.') {
            s = s[first_digit..].to_string();
        }
    }
    if !s.starts_with(|c: char| c.is_ascii_digit()) {
        return s;
    }
    if !s.contains('.') && s.contains('_') {
        let numeric_head: String = s.chars().take_while(|c| c.is_ascii_digit() || *c == '_').collect();
        if numeric_head.contains('_') {
            let head = numeric_head.trim_end_matches('_');
            s = format!("{}{}", head.replace('_', "."), &s[head.len()..]);
        }
    }
    let key = VersionKey::parse(&s);
    key.render()
}

/// Numeric components plus the remaining pre-release/build suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionKey {
    pub numbers: Vec<u64>,
    pub suffix: String,
}

impl VersionKey {
    /// Parse an already-normalized version string.
    pub fn parse(normalized: &str) -> Self {
        let bytes = normalized.as_bytes();
        let mut numbers = Vec::new();
        let mut i = 0;
        loop {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i == start {
                break;
            }
            match normalized[start..i].parse::<u64>() {
                Ok(n) => numbers.push(n),
                Err(_) => {
                    i = start;
                    break;
                }
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
            } else {
                break;
            }
        }
        if numbers.is_empty() {
            return Self {
                numbers,
                suffix: normalized.to_string(),
            };
        }
        Self {
            numbers,
            suffix: normalized[i..].to_string(),
        }
    }

    pub fn render(&self) -> String {
        let nums: Vec<String> = self.numbers.iter().map(u64::to_string).collect();
        format!("{}{}", nums.join("."), self.suffix)
    }

    /// Two keys share a release line when their first two components agree.
    pub fn same_release_line(&self, other: &VersionKey) -> bool {
        self.numbers.len() >= 2 && other.numbers.len() >= 2 && self.numbers[..2] == other.numbers[..2]
    }
}

impl Ord for VersionKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.numbers.cmp(&other.numbers).then_with(|| {
            // a bare release sorts after its pre-releases
            match (self.suffix.is_empty(), other.suffix.is_empty()) {
                (true, true) => Ordering::Equal,
                (true, false) if !self.numbers.is_empty() => Ordering::Greater,
                (false, true) if !other.numbers.is_empty() => Ordering::Less,
                _ => self.suffix.cmp(&other.suffix),
            }
        })
    }
}

impl PartialOrd for VersionKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_common_prefixes() {
        assert_eq!(normalize_version("v1.2.3"), "1.2.3");
        assert_eq!(normalize_version("release-1.2.3"), "1.2.3");
        assert_eq!(normalize_version("rel/1.2"), "1.2");
        assert_eq!(normalize_version("V2.0.0-RC1"), "2.0.0-rc1");
        assert_eq!(normalize_version("curl-7_69_1"), "7.69.1");
        assert_eq!(normalize_version("latest"), "latest");
        assert_eq!(normalize_version("1.02"), "1.2");
    }

    #[test]
    fn numeric_not_lexicographic() {
        let a = VersionKey::parse(&normalize_version("1.9.0"));
        let b = VersionKey::parse(&normalize_version("1.10.0"));
        assert!(a < b);
    }

    #[test]
    fn prerelease_before_release() {
        let rc = VersionKey::parse("1.0.0-rc1");
        let rel = VersionKey::parse("1.0.0");
        assert!(rc < rel);
        assert!(VersionKey::parse("latest") < VersionKey::parse("0.0.1"));
    }

    #[test]
    fn release_line() {
        let a = VersionKey::parse("1.2.9");
        assert!(a.same_release_line(&VersionKey::parse("1.2.10")));
        assert!(!a.same_release_line(&VersionKey::parse("1.3.0")));
        assert!(!VersionKey::parse("3").same_release_line(&VersionKey::parse("3")));
    }

    fn tag_name() -> impl Strategy<Value = String> {
        prop_oneof![
            "(v|release-|rel/|foo-|)[0-9]{1,3}(\\.[0-9]{1,3}){0,3}(-rc[0-9]|-beta|)",
            "[a-z0-9_.\\-]{0,12}",
            "[a-z]{1,4}-[0-9]{1,2}_[0-9]{1,2}_[0-9]{1,2}",
        ]
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(name in tag_name()) {
            let once = normalize_version(&name);
            prop_assert_eq!(normalize_version(&once), once.clone());
            prop_assert_eq!(VersionKey::parse(&once).render(), once);
        }

        #[test]
        fn ordering_is_total(a in tag_name(), b in tag_name(), c in tag_name()) {
            let (ka, kb, kc) = (
                VersionKey::parse(&normalize_version(&a)),
                VersionKey::parse(&normalize_version(&b)),
                VersionKey::parse(&normalize_version(&c)),
            );
            prop_assert_eq!(ka.cmp(&kb), kb.cmp(&ka).reverse());
            if ka <= kb && kb <= kc {
                prop_assert!(ka <= kc);
            }
        }

        #[test]
        fn matches_componentwise_oracle(a in proptest::collection::vec(0u64..30, 1..4), b in proptest::collection::vec(0u64..30, 1..4)) {
            let render = |v: &Vec<u64>| v.iter().map(u64::to_string).collect::<Vec<_>>().join(".");
            let ka = VersionKey::parse(&normalize_version(&format!("v{}", render(&a))));
            let kb = VersionKey::parse(&normalize_version(&render(&b)));
            // component-wise comparison, missing components sort first
            let mut oracle = std::cmp::Ordering::Equal;
            for i in 0..a.len().max(b.len()) {
                oracle = match (a.get(i), b.get(i)) {
                    (Some(x), Some(y)) => x.cmp(y),
                    (None, Some(_)) => std::cmp::Ordering::Less,
                    (Some(_), None) => std::cmp::Ordering::Greater,
                    (None, None) => unreachable!(),
                };
                if oracle != std::cmp::Ordering::Equal { break; }
            }
            prop_assert_eq!(ka.cmp(&kb), oracle);
        }
    }
}
