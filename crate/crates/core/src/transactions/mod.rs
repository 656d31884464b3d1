//! Transaction kinds and ledger admissibility rules.

mod dl;
mod genesis;
mod load_control;
pub mod payload;

pub use dl::{
    dl_secret, make_dl, DlFlag, DlTransaction, DL_DATA_OFFSET, DL_ENCODED_LEN, DL_FLAG_OFFSET,
};
pub use genesis::{GenesisTransaction, NodeRole};
pub use load_control::{compute_tid, LoadControlTransaction, TxError};
pub use payload::{Action, ActionRequest, ActionResponse, ContractTerms, Payload};

use std::fmt;

use crate::crypto::{Digest, PublicKey};

/// Read access to committed (or about-to-be-committed) ledger state that
/// admissibility checks need.
pub trait LedgerView {
    /// The permissioned authority (DISCO) key.
    fn authority(&self) -> PublicKey;
    fn load_control(&self, t_id: &Digest) -> Option<&LoadControlTransaction>;
    fn genesis_of(&self, pk: &PublicKey) -> Option<&GenesisTransaction>;
    /// True if any entry (load-control t_id or genesis id) has this id.
    fn contains_id(&self, id: &Digest) -> bool;
}

/// Why a transaction may not be stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    MissingSignature,
    BadSignature,
    BadTid,
    BadChain,
    BadRef,
    /// Id already present on the ledger (replayed transaction).
    Duplicate,
    /// Generator, receiver or customer has no genesis on the ledger.
    NotAdmitted,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Reason::MissingSignature => "missing signature",
            Reason::BadSignature => "bad signature",
            Reason::BadTid => "t_id does not match content",
            Reason::BadChain => "p_t_id does not chain to the generator",
            Reason::BadRef => "bad reference",
            Reason::Duplicate => "duplicate id",
            Reason::NotAdmitted => "party not admitted",
        };
        f.write_str(s)
    }
}

pub trait Admissible {
    fn check(&self, view: &dyn LedgerView) -> Result<(), Reason>;
}

/// Boolean-plus-reason form of [`Admissible::check`].
pub fn is_admissible<T: Admissible + ?Sized>(
    tx: &T,
    view: &dyn LedgerView,
) -> (bool, Option<Reason>) {
    match tx.check(view) {
        Ok(()) => (true, None),
        Err(reason) => (false, Some(reason)),
    }
}

impl Admissible for LoadControlTransaction {
    fn check(&self, view: &dyn LedgerView) -> Result<(), Reason> {
        if !self.is_fully_signed() {
            return Err(Reason::MissingSignature);
        }
        if self.t_id != self.compute_tid() {
            return Err(Reason::BadTid);
        }
        if !self.generator_signature_valid() || !self.receiver_signature_valid() {
            return Err(Reason::BadSignature);
        }
        if view.contains_id(&self.t_id) {
            return Err(Reason::Duplicate);
        }
        let Some(genesis) = view.genesis_of(&self.pk_gen) else {
            return Err(Reason::NotAdmitted);
        };
        if view.genesis_of(&self.pk_rec).is_none() {
            return Err(Reason::NotAdmitted);
        }
        let chained = self.p_t_id == genesis.id()
            || view
                .load_control(&self.p_t_id)
                .is_some_and(|prev| prev.pk_gen == self.pk_gen);
        if !chained {
            return Err(Reason::BadChain);
        }
        let authority = view.authority();
        if self.pk_gen == authority {
            if self.ref_disco_id.is_some() {
                return Err(Reason::BadRef);
            }
        } else {
            let resolves = self
                .ref_disco_id
                .and_then(|r| view.load_control(&r))
                .is_some_and(|req| req.pk_gen == authority);
            if !resolves {
                return Err(Reason::BadRef);
            }
        }
        Ok(())
    }
}

impl Admissible for GenesisTransaction {
    fn check(&self, view: &dyn LedgerView) -> Result<(), Reason> {
        let authority = view.authority();
        if self.disco_sig.is_none() {
            return Err(Reason::MissingSignature);
        }
        if self.role.is_customer_site() && self.customer_sig.is_none() {
            return Err(Reason::MissingSignature);
        }
        if !self.disco_signature_valid(&authority) {
            return Err(Reason::BadSignature);
        }
        if self.role.is_customer_site() && !self.customer_signature_valid() {
            return Err(Reason::BadSignature);
        }
        if view.genesis_of(&self.subject_pk).is_some() || view.contains_id(&self.id()) {
            return Err(Reason::Duplicate);
        }
        match self.role {
            NodeRole::Disco => {
                if self.subject_pk != authority
                    || self.customer_pk.is_some()
                    || self.contract_ref.is_some()
                {
                    return Err(Reason::BadRef);
                }
            }
            _ if view.genesis_of(&authority).is_none() => return Err(Reason::BadChain),
            role if role.is_customer_site() => {
                let customer = self.customer_pk.ok_or(Reason::BadRef)?;
                match view.genesis_of(&customer) {
                    Some(g) if g.role == NodeRole::Consumer => {}
                    _ => return Err(Reason::NotAdmitted),
                }
                let contract_ok = self
                    .contract_ref
                    .and_then(|r| view.load_control(&r))
                    .is_some_and(|c| {
                        c.pk_gen == authority
                            && c.pk_rec == customer
                            && Payload::is_contract(&c.metadata)
                    });
                if !contract_ok {
                    return Err(Reason::BadRef);
                }
            }
            _ => {
                if self.customer_pk.is_some()
                    || self.contract_ref.is_some()
                    || self.customer_sig.is_some()
                {
                    return Err(Reason::BadRef);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::crypto::{digest, keygen, KeyPair};
    use std::collections::HashMap;

    /// Minimal in-memory view for exercising the rules without a ledger.
    #[derive(Default)]
    pub(crate) struct MapView {
        pub authority: Option<PublicKey>,
        pub txs: HashMap<Digest, LoadControlTransaction>,
        pub geneses: HashMap<PublicKey, GenesisTransaction>,
    }

    impl MapView {
        pub fn admit(&mut self, g: GenesisTransaction) {
            self.geneses.insert(g.subject_pk, g);
        }
        pub fn store(&mut self, tx: LoadControlTransaction) {
            self.txs.insert(tx.t_id, tx);
        }
    }

    impl LedgerView for MapView {
        fn authority(&self) -> PublicKey {
            self.authority.unwrap()
        }
        fn load_control(&self, t_id: &Digest) -> Option<&LoadControlTransaction> {
            self.txs.get(t_id)
        }
        fn genesis_of(&self, pk: &PublicKey) -> Option<&GenesisTransaction> {
            self.geneses.get(pk)
        }
        fn contains_id(&self, id: &Digest) -> bool {
            self.txs.contains_key(id) || self.geneses.values().any(|g| g.id() == *id)
        }
    }

    pub(crate) struct Fixture {
        pub disco: KeyPair,
        pub customer: KeyPair,
        pub view: MapView,
    }

    pub(crate) fn fixture() -> Fixture {
        let disco = keygen(&[10; 32]).unwrap();
        let customer = keygen(&[20; 32]).unwrap();
        let mut view = MapView {
            authority: Some(disco.public()),
            ..MapView::default()
        };
        view.admit(
            GenesisTransaction::participant(NodeRole::Disco, disco.public(), "disco")
                .sign_as_disco(&disco),
        );
        view.admit(
            GenesisTransaction::participant(NodeRole::Consumer, customer.public(), "c0")
                .sign_as_disco(&disco),
        );
        Fixture {
            disco,
            customer,
            view,
        }
    }

    fn contract(f: &Fixture) -> LoadControlTransaction {
        let p = f.view.genesis_of(&f.disco.public()).unwrap().id();
        LoadControlTransaction::new(
            p,
            f.disco.public(),
            f.customer.public(),
            None,
            vec![0x01; 60],
        )
    }

    #[test]
    fn missing_receiver_signature() {
        let f = fixture();
        let tx = contract(&f).sign_as_generator(&f.disco).unwrap();
        assert_eq!(
            is_admissible(&tx, &f.view),
            (false, Some(Reason::MissingSignature))
        );
    }

    #[test]
    fn fully_signed_chained_transaction_is_admissible() {
        let f = fixture();
        let tx = contract(&f)
            .sign_as_generator(&f.disco)
            .unwrap()
            .countersign_as_receiver(&f.customer)
            .unwrap();
        assert_eq!(is_admissible(&tx, &f.view), (true, None));
    }

    #[test]
    fn tampered_fields_are_rejected() {
        let f = fixture();
        let tx = contract(&f)
            .sign_as_generator(&f.disco)
            .unwrap()
            .countersign_as_receiver(&f.customer)
            .unwrap();
        let mut bad_tid = tx.clone();
        bad_tid.t_id = digest(b"x");
        assert_eq!(bad_tid.check(&f.view), Err(Reason::BadTid));
        let mut bad_meta = tx.clone();
        bad_meta.metadata[3] ^= 1;
        assert_eq!(bad_meta.check(&f.view), Err(Reason::BadTid));
        let mut bad_sig = tx.clone();
        let mut s = *bad_sig.sign_rec.unwrap().as_bytes();
        s[0] ^= 1;
        bad_sig.sign_rec = Some(crate::crypto::Signature::from_array(s));
        assert_eq!(bad_sig.check(&f.view), Err(Reason::BadSignature));
    }

    #[test]
    fn disco_transaction_with_reference_is_bad_ref() {
        let f = fixture();
        let p = f.view.genesis_of(&f.disco.public()).unwrap().id();
        let tx = LoadControlTransaction::new(
            p,
            f.disco.public(),
            f.customer.public(),
            Some(digest(b"r")),
            vec![],
        )
        .sign_as_generator(&f.disco)
        .unwrap()
        .countersign_as_receiver(&f.customer)
        .unwrap();
        assert_eq!(tx.check(&f.view), Err(Reason::BadRef));
    }

    #[test]
    fn customer_response_with_dangling_reference() {
        let f = fixture();
        let p = f.view.genesis_of(&f.customer.public()).unwrap().id();
        let tx = LoadControlTransaction::new(
            p,
            f.customer.public(),
            f.disco.public(),
            Some(digest(b"nonexistent")),
            vec![],
        )
        .sign_as_generator(&f.customer)
        .unwrap()
        .countersign_as_receiver(&f.disco)
        .unwrap();
        assert_eq!(is_admissible(&tx, &f.view), (false, Some(Reason::BadRef)));
    }

    #[test]
    fn customer_response_resolving_to_disco_request_is_admissible() {
        let mut f = fixture();
        let request = contract(&f)
            .sign_as_generator(&f.disco)
            .unwrap()
            .countersign_as_receiver(&f.customer)
            .unwrap();
        f.view.store(request.clone());
        let p = f.view.genesis_of(&f.customer.public()).unwrap().id();
        let response = LoadControlTransaction::new(
            p,
            f.customer.public(),
            f.disco.public(),
            Some(request.t_id),
            vec![2],
        )
        .sign_as_generator(&f.customer)
        .unwrap()
        .countersign_as_receiver(&f.disco)
        .unwrap();
        assert_eq!(response.check(&f.view), Ok(()));
        // Replaying the stored request is a duplicate.
        assert_eq!(request.check(&f.view), Err(Reason::Duplicate));
    }

    #[test]
    fn unchained_previous_id_is_bad_chain() {
        let f = fixture();
        let tx = LoadControlTransaction::new(
            digest(b"elsewhere"),
            f.disco.public(),
            f.customer.public(),
            None,
            vec![],
        )
        .sign_as_generator(&f.disco)
        .unwrap()
        .countersign_as_receiver(&f.customer)
        .unwrap();
        assert_eq!(tx.check(&f.view), Err(Reason::BadChain));
    }

    #[test]
    fn adding_a_signature_never_revokes_admissibility() {
        let f = fixture();
        let unsigned = contract(&f);
        let gen_only = unsigned.clone().sign_as_generator(&f.disco).unwrap();
        let rec_only = unsigned
            .clone()
            .countersign_as_receiver(&f.customer)
            .unwrap();
        let both = gen_only
            .clone()
            .countersign_as_receiver(&f.customer)
            .unwrap();
        for partial in [&unsigned, &gen_only, &rec_only] {
            assert!(!is_admissible(partial, &f.view).0);
        }
        assert!(is_admissible(&both, &f.view).0);
    }

    #[test]
    fn sensor_genesis_needs_both_signatures_and_a_contract() {
        let mut f = fixture();
        let c = contract(&f)
            .sign_as_generator(&f.disco)
            .unwrap()
            .countersign_as_receiver(&f.customer)
            .unwrap();
        f.view.store(c.clone());
        let sensor = keygen(&[30; 32]).unwrap();
        let g = GenesisTransaction::customer_site(
            NodeRole::Sensor,
            sensor.public(),
            f.customer.public(),
            c.t_id,
            "temp",
        );
        let disco_only = g.clone().sign_as_disco(&f.disco);
        assert_eq!(disco_only.check(&f.view), Err(Reason::MissingSignature));
        let customer_only = g.clone().countersign_as_customer(&f.customer).unwrap();
        assert_eq!(customer_only.check(&f.view), Err(Reason::MissingSignature));
        let both = disco_only.countersign_as_customer(&f.customer).unwrap();
        assert_eq!(both.check(&f.view), Ok(()));

        let dangling = GenesisTransaction::customer_site(
            NodeRole::Sensor,
            sensor.public(),
            f.customer.public(),
            digest(b"nope"),
            "temp",
        )
        .sign_as_disco(&f.disco)
        .countersign_as_customer(&f.customer)
        .unwrap();
        assert_eq!(dangling.check(&f.view), Err(Reason::BadRef));
    }

    #[test]
    fn participant_genesis_rules() {
        let f = fixture();
        let p = keygen(&[40; 32]).unwrap();
        let g = GenesisTransaction::participant(NodeRole::Producer, p.public(), "p0");
        assert_eq!(g.check(&f.view), Err(Reason::MissingSignature));
        let signed = g.clone().sign_as_disco(&f.disco);
        assert_eq!(signed.check(&f.view), Ok(()));
        let forged = g.sign_as_disco(&p);
        assert_eq!(forged.check(&f.view), Err(Reason::BadSignature));
        let again = GenesisTransaction::participant(NodeRole::Consumer, f.customer.public(), "c0")
            .sign_as_disco(&f.disco);
        assert_eq!(again.check(&f.view), Err(Reason::Duplicate));
    }
}
