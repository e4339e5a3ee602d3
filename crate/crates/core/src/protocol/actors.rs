use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::crypto::{
    aead_open, aead_seal, hash, CryptoError, Digest, HybridCiphertext, PublicKey, SimRng, SymmetricKey,
};
use crate::netsim::{ActorId, MsgType};
use crate::pca::{AikCredential, BindingKeyCertificate};
use crate::tpm::{KeyHandle, SealedBlob, TpmError, TpmState, PCR_COUNT};

pub type UserId = String;

/// PCR carrying the e-mail client measurement; default seal/binding target.
pub const APP_PCR: usize = 10;
pub const APP_COMPONENT: &str = "mail_client";

/// One measured software component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub pcr: usize,
    pub name: String,
    #[serde(with = "hex::serde")]
    pub code: Vec<u8>,
}

impl Component {
    pub fn new(pcr: usize, name: &str, code: &[u8]) -> Self {
        Self { pcr, name: name.to_owned(), code: code.to_vec() }
    }

    pub fn digest(&self) -> Digest {
        hash(&self.code)
    }
}

/// The five-stage boot chain of the reference handset, ending with the
/// e-mail client measured into [`APP_PCR`].
pub fn reference_platform() -> Vec<Component> {
    vec![
        Component::new(0, "bios", b"bios-image-v1"),
        Component::new(4, "bootloader", b"bootloader-v1"),
        Component::new(8, "os_kernel", b"kernel-v1"),
        Component::new(9, "push_agent", b"push-agent-v1"),
        Component::new(APP_PCR, APP_COMPONENT, b"mail-client-v1"),
    ]
}

/// Whitelist of acceptable component measurements.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceMeasurementDb {
    entries: BTreeMap<String, BTreeSet<Digest>>,
    required_components: Vec<String>,
}

impl ReferenceMeasurementDb {
    pub fn new(
        entries: BTreeMap<String, BTreeSet<Digest>>,
        required_components: Vec<String>,
    ) -> Result<Self, ProtocolError> {
        if let Some(missing) = required_components.iter().find(|c| !entries.contains_key(*c)) {
            return Err(ProtocolError::BadReferenceDb(format!("required component `{missing}` has no entry")));
        }
        Ok(Self { entries, required_components })
    }

    /// Accepts exactly `components`, requiring the ones named in `required`.
    pub fn for_components(components: &[Component], required: &[&str]) -> Result<Self, ProtocolError> {
        let mut entries: BTreeMap<String, BTreeSet<Digest>> = BTreeMap::new();
        for c in components {
            entries.entry(c.name.clone()).or_default().insert(c.digest());
        }
        Self::new(entries, required.iter().map(|s| s.to_string()).collect())
    }

    pub fn allow(&mut self, component: &str, digest: Digest) {
        self.entries.entry(component.to_owned()).or_default().insert(digest);
    }

    pub fn is_allowed(&self, component: &str, digest: &Digest) -> bool {
        self.entries.get(component).is_some_and(|s| s.contains(digest))
    }

    pub fn required_components(&self) -> &[String] {
        &self.required_components
    }
}

/// Origin of pushed data (e.g. a mail server).
#[derive(Debug, Clone)]
pub struct DataSource {
    pub id: ActorId,
    outbox: VecDeque<(UserId, Vec<u8>)>,
}

impl DataSource {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: ActorId::new(id), outbox: VecDeque::new() }
    }

    /// New data waiting to be polled (pull mode).
    pub fn offer(&mut self, user: &str, payload: Vec<u8>) {
        self.outbox.push_back((user.to_owned(), payload));
    }

    pub fn waiting(&self) -> usize {
        self.outbox.len()
    }

    pub(crate) fn drain(&mut self) -> impl Iterator<Item = (UserId, Vec<u8>)> + '_ {
        self.outbox.drain(..)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingItem {
    pub source: ActorId,
    pub user: UserId,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Registration {
    pub certificate: BindingKeyCertificate,
    pub binding_public: PublicKey,
}

/// Synchronisation server.
#[derive(Debug, Clone)]
pub struct SyncServer {
    pub id: ActorId,
    pub(crate) pca_public: PublicKey,
    pub reference_db: ReferenceMeasurementDb,
    /// Registers requested in attestation quotes; defaults to the full bank.
    pub attestation_selection: BTreeSet<usize>,
    pub(crate) registry: BTreeMap<UserId, Registration>,
    pub(crate) pending: VecDeque<PendingItem>,
    pub(crate) rng: SimRng,
    channels_opened: u64,
}

impl SyncServer {
    pub fn new(
        id: impl Into<String>,
        pca_public: PublicKey,
        reference_db: ReferenceMeasurementDb,
        rng: SimRng,
    ) -> Self {
        Self {
            id: ActorId::new(id),
            pca_public,
            reference_db,
            attestation_selection: (0..PCR_COUNT).collect(),
            registry: BTreeMap::new(),
            pending: VecDeque::new(),
            rng,
            channels_opened: 0,
        }
    }

    pub fn pending(&self) -> &VecDeque<PendingItem> {
        &self.pending
    }

    pub fn registration(&self, user: &str) -> Option<&Registration> {
        self.registry.get(user)
    }

    pub(crate) fn enqueue(&mut self, source: &ActorId, user: &str, payload: Vec<u8>) {
        self.pending.push_back(PendingItem { source: source.clone(), user: user.to_owned(), payload });
    }

    /// Drains everything the source has waiting (pull mode).
    pub fn poll(&mut self, source: &mut DataSource) -> usize {
        let items: Vec<_> = source.drain().collect();
        let n = items.len();
        for (user, payload) in items {
            self.enqueue(&source.id, &user, payload);
        }
        n
    }

    /// Removes up to `max` pending items for `user`, oldest first.
    pub(crate) fn take_pending(&mut self, user: &str, max: usize) -> Vec<PendingItem> {
        let mut taken = Vec::new();
        let mut rest = VecDeque::new();
        while let Some(item) = self.pending.pop_front() {
            if taken.len() < max && item.user == user {
                taken.push(item);
            } else {
                rest.push_back(item);
            }
        }
        self.pending = rest;
        taken
    }

    pub(crate) fn next_channel_id(&mut self) -> u64 {
        self.channels_opened += 1;
        self.channels_opened
    }
}

#[derive(Clone, Debug)]
pub struct AikSlot {
    pub handle: KeyHandle,
    pub credential: AikCredential,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundItem {
    pub key_id: Digest,
    pub ciphertext: HybridCiphertext,
}

/// How the device misreports its measurement log during attestation.
/// Honest devices leave this unset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogMutation {
    Delete(usize),
    SwapAdjacent(usize),
    FlipDigest(usize),
}

impl LogMutation {
    pub fn apply(self, log: &mut crate::tpm::MeasurementLog) {
        match self {
            LogMutation::Delete(i) => {
                log.events.remove(i);
            }
            LogMutation::SwapAdjacent(i) => log.events.swap(i, i + 1),
            LogMutation::FlipDigest(i) => log.events[i].code_digest.0[0] ^= 0x01,
        }
    }
}

/// Mobile handset with its TPM/MTM.
#[derive(Debug, Clone)]
pub struct DeviceActor {
    pub id: ActorId,
    pub user: UserId,
    pub tpm: TpmState,
    pub(crate) auth: Vec<u8>,
    pub(crate) aik: Option<AikSlot>,
    pub(crate) aik_pool: VecDeque<KeyHandle>,
    pub sealed_inbox: Vec<SealedBlob>,
    pub bound_inbox: Vec<BoundItem>,
    pub(crate) binding_key: Option<Digest>,
    /// Registers sealed blobs and binding keys are locked to.
    pub seal_selection: BTreeSet<usize>,
    pub app_measured: bool,
    pub shipped_log_mutation: Option<LogMutation>,
    pub(crate) rng: SimRng,
}

impl DeviceActor {
    /// Wraps a TPM, taking ownership with `auth`.
    pub fn new(
        id: impl Into<String>,
        user: &str,
        mut tpm: TpmState,
        auth: &[u8],
        rng: SimRng,
    ) -> Result<Self, ProtocolError> {
        tpm.take_ownership(auth)?;
        Ok(Self {
            id: ActorId::new(id),
            user: user.to_owned(),
            tpm,
            auth: auth.to_vec(),
            aik: None,
            aik_pool: VecDeque::new(),
            sealed_inbox: Vec::new(),
            bound_inbox: Vec::new(),
            binding_key: None,
            seal_selection: BTreeSet::from([APP_PCR]),
            app_measured: false,
            shipped_log_mutation: None,
            rng,
        })
    }

    /// Measures `components` in order.
    pub fn boot(&mut self, components: &[Component]) -> Result<(), ProtocolError> {
        for c in components {
            self.tpm.measure(c.pcr, &c.name, &c.code)?;
            if c.name == APP_COMPONENT {
                self.app_measured = true;
            }
        }
        Ok(())
    }

    pub fn aik(&self) -> Option<&AikSlot> {
        self.aik.as_ref()
    }

    /// Makes `slot` the AIK used for the next attestation.
    pub fn install_aik(&mut self, slot: AikSlot) {
        self.aik = Some(slot);
    }

    pub fn binding_key(&self) -> Option<Digest> {
        self.binding_key
    }

    pub fn read_sealed(&self, index: usize) -> Result<Vec<u8>, TpmError> {
        self.tpm.unseal(&self.auth, &self.sealed_inbox[index])
    }

    pub fn read_bound(&self, index: usize) -> Result<Vec<u8>, TpmError> {
        let item = &self.bound_inbox[index];
        self.tpm.bound_decrypt(&self.auth, &item.key_id, &item.ciphertext)
    }
}

/// Ideal secure channel between server and device: a fresh symmetric
/// session key, known only to the two endpoints, protects every record.
#[derive(Clone, Debug)]
pub struct SecureChannel {
    pub id: u64,
    pub server: ActorId,
    pub device: ActorId,
    key: SymmetricKey,
    records: u64,
}

impl SecureChannel {
    pub(crate) fn new(id: u64, server: ActorId, device: ActorId, key: SymmetricKey) -> Self {
        Self { id, server, device, key, records: 0 }
    }

    /// `nonce || ciphertext`; the message type is authenticated.
    pub(crate) fn seal(&mut self, msg_type: MsgType, plaintext: &[u8]) -> Vec<u8> {
        self.records += 1;
        let mut nonce = [0u8; 12];
        nonce[..8].copy_from_slice(&self.id.to_be_bytes()[..8]);
        nonce[8..].copy_from_slice(&(self.records as u32).to_be_bytes());
        let mut out = nonce.to_vec();
        out.extend(aead_seal(&self.key, &nonce, msg_type.label().as_bytes(), plaintext));
        out
    }

    pub(crate) fn open(&self, msg_type: MsgType, record: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if record.len() < 12 {
            return Err(CryptoError::Parse("short channel record".into()));
        }
        let nonce: [u8; 12] = record[..12].try_into().unwrap();
        aead_open(&self.key, &nonce, msg_type.label().as_bytes(), &record[12..])
    }
}
