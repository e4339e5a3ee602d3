//! One server, one handset, one PCA, wired onto a network and seeded
//! from a single 64-bit value.

use std::collections::BTreeSet;

use crate::crypto::{derive_rng, keygen, random_bytes, rng_from_seed, Digest, KeyPair, KeyRole, SimRng, Suite};
use crate::netsim::{CostTable, Network, Topology};
use crate::pca::PrivacyCa;
use crate::protocol::{
    reference_platform, Component, DataSource, DeviceActor, PcaActor, ProtocolError, ReferenceMeasurementDb,
    SyncServer, APP_COMPONENT, APP_PCR,
};
use crate::tpm::TpmState;

pub const SERVER_ID: &str = "server";
pub const SOURCE_ID: &str = "mail-source";
pub const DEVICE_ID: &str = "device-0";
pub const USER_ID: &str = "alice";

#[derive(Clone, Debug)]
pub struct WorldSpec {
    pub seed: u64,
    pub suite: Suite,
    pub topology: Topology,
    pub costs: CostTable,
    /// Components the handset measures at boot, in order.
    pub platform: Vec<Component>,
    /// Extra acceptable `(component, digest)` pairs for the verifier.
    pub extra_whitelist: Vec<(String, Digest)>,
    pub seal_selection: BTreeSet<usize>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            suite: Suite::default(),
            topology: Topology::default(),
            costs: CostTable::default(),
            platform: reference_platform(),
            extra_whitelist: Vec::new(),
            seal_selection: BTreeSet::from([APP_PCR]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub net: Network,
    pub source: DataSource,
    pub server: SyncServer,
    pub pca: PcaActor,
    pub device: DeviceActor,
    /// Kept for manufacturing further TPMs.
    pub manufacturer: KeyPair,
    /// Left over for the caller (payload markers, store salts).
    pub rng: SimRng,
}

impl World {
    /// Builds and boots the handset. Whitelist entries are taken from the
    /// reference platform, so an honest boot attests as trusted.
    pub fn build(ws: &WorldSpec) -> Result<Self, ProtocolError> {
        let mut root = rng_from_seed(ws.seed);
        let manufacturer = keygen(ws.suite, &random_bytes(&mut root), KeyRole::Root);
        let ca = PrivacyCa::new(ws.suite, &random_bytes(&mut root));
        let pca = PcaActor::new(ca, manufacturer.public.clone());

        let mut db = ReferenceMeasurementDb::for_components(&reference_platform(), &[APP_COMPONENT])?;
        for (name, digest) in &ws.extra_whitelist {
            db.allow(name, *digest);
        }
        let server = SyncServer::new(SERVER_ID, pca.ca.public_key().clone(), db, derive_rng(&mut root, "server"));

        let tpm = TpmState::manufacture(&random_bytes(&mut root), &manufacturer.private);
        let owner_auth: [u8; 16] = random_bytes(&mut root);
        let mut device = DeviceActor::new(DEVICE_ID, USER_ID, tpm, &owner_auth, derive_rng(&mut root, "device"))?;
        device.seal_selection = ws.seal_selection.clone();
        device.boot(&ws.platform)?;

        Ok(Self {
            net: Network::new(ws.topology, ws.costs.clone()),
            source: DataSource::new(SOURCE_ID),
            server,
            pca,
            device,
            manufacturer,
            rng: derive_rng(&mut root, "run"),
        })
    }
}
