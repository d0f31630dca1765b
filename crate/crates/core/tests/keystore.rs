use efpix_core::{CipherSuiteId, Contact, ContactBook, KeyPair};
use proptest::prelude::*;

fn alias() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9_ äöü-]{1,5}".prop_filter("alias fits", |s| !s.is_empty() && s.len() <= 16)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hundred_contacts_survive_a_round_trip(
        entries in prop::collection::btree_map(alias(), (any::<[u8; 32]>(), alias()), 100..=100),
        own_seed in any::<[u8; 32]>(),
    ) {
        let own = KeyPair::generate(CipherSuiteId::MockFixedSize, Some(own_seed)).unwrap();
        let mut book = ContactBook::new(own);
        for (their, (seed, mine)) in &entries {
            let key = KeyPair::generate(CipherSuiteId::MockFixedSize, Some(*seed)).unwrap().public;
            book.add_contact(Contact::new(their, key, mine).unwrap(), false).unwrap();
        }
        prop_assert_eq!(book.len(), 100);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keystore.json");
        book.save(&path).unwrap();
        let loaded = ContactBook::load(&path).unwrap();
        prop_assert_eq!(&loaded, &book);
        for (their, (seed, mine)) in &entries {
            let c = loaded.lookup_sender(their).unwrap();
            let key = KeyPair::generate(CipherSuiteId::MockFixedSize, Some(*seed)).unwrap().public;
            prop_assert_eq!(&c.their_public_key, &key);
            prop_assert_eq!(c.my_alias_for_them.as_str(), mine.as_str());
        }
    }
}
