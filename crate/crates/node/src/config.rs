//! Data directory layout, network bootstrap and node configuration.

use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use bcer2_core::consensus::{majority, validator_ids};
use bcer2_core::identity::{load_card, save_card, ConnectionProfile, IdCard, IdentityError, KeyPair, PublicKey, Role};
use bcer2_core::ledger::make_genesis;
use bcer2_core::model::{parse_acl, parse_model, AclRuleSet, ModelDefinition};
use bcer2_core::records::{NetworkParams, DEFAULT_ACL_SOURCE, DEFAULT_MODEL_SOURCE};
use bcer2_core::store::{ChainStore, CHAIN_FILE};
use bcer2_core::HashDigest;
use rand::rngs::OsRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NETWORK_FILE: &str = "network.json";
pub const ROSTER_FILE: &str = "validators.key.json";
pub const AUTHORITY_FILE: &str = "authority.key";
pub const MODEL_FILE: &str = "network.model";
pub const ACL_FILE: &str = "network.acl";
pub const CARDS_DIR: &str = "cards";
pub const DATA_DIR_ENV: &str = "BCER2_DATA_DIR";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8480";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {problem}")]
    Malformed { path: PathBuf, problem: String },
    #[error("{0} is already initialized")]
    AlreadyInitialized(PathBuf),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Card(#[from] IdentityError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ConfigError + '_ {
    move |source| ConfigError::Io { path: path.to_owned(), source }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Malformed { path: path.to_owned(), problem: e.to_string() })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ConfigError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// `network.json`: public description of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub network_id: String,
    pub quorum: usize,
    /// Roster order, which is also leader-rotation order.
    pub validators: Vec<String>,
    pub authority_public_key: PublicKey,
    pub max_delay_ticks: u64,
    pub created_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RosterEntry {
    id: String,
    public_key: PublicKey,
    secret_seed: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RosterFile {
    validators: Vec<RosterEntry>,
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub network_id: String,
    pub roster_path: PathBuf,
    pub quorum: usize,
    pub authority: PublicKey,
}

impl NodeConfig {
    /// Reads `network.json` from `data_dir`, or from `BCER2_DATA_DIR` when
    /// that is set.
    pub fn load(data_dir: impl Into<PathBuf>, listen: SocketAddr) -> Result<Self, ConfigError> {
        let data_dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| data_dir.into());
        let net: NetworkFile = read_json(&data_dir.join(NETWORK_FILE))?;
        let config = NodeConfig {
            listen,
            roster_path: data_dir.join(ROSTER_FILE),
            data_dir,
            network_id: net.network_id,
            quorum: net.quorum,
            authority: net.authority_public_key,
        };
        config.validate(net.validators.len())?;
        Ok(config)
    }

    pub fn validate(&self, roster_size: usize) -> Result<(), ConfigError> {
        if roster_size == 0 || self.quorum < majority(roster_size) || self.quorum > roster_size {
            return Err(ConfigError::Invalid(format!("quorum {} does not fit {roster_size} validators", self.quorum)));
        }
        let probe = self.data_dir.join(".write-probe");
        fs::write(&probe, b"").map_err(io_err(&self.data_dir))?;
        let _ = fs::remove_file(probe);
        Ok(())
    }

    pub fn network_file(&self) -> Result<NetworkFile, ConfigError> {
        read_json(&self.data_dir.join(NETWORK_FILE))
    }

    /// Network parameters with validator secrets from the roster file.
    pub fn params(&self) -> Result<NetworkParams, ConfigError> {
        let net = self.network_file()?;
        let roster: RosterFile = read_json(&self.roster_path)?;
        let malformed = |problem: String| ConfigError::Malformed { path: self.roster_path.clone(), problem };
        if roster.validators.iter().map(|v| &v.id).ne(net.validators.iter()) {
            return Err(malformed("roster does not match network.json".into()));
        }
        let validators = roster
            .validators
            .into_iter()
            .map(|v| {
                let mut seed = [0u8; 32];
                hex::decode_to_slice(&v.secret_seed, &mut seed).map_err(|e| malformed(format!("{}: {e}", v.id)))?;
                let key = KeyPair::from_seed(seed);
                if key.public_key() != v.public_key {
                    return Err(malformed(format!("{}: seed does not match public key", v.id)));
                }
                Ok((v.id, key))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(NetworkParams {
            network_id: net.network_id,
            quorum: net.quorum,
            validators,
            authority: net.authority_public_key,
            max_delay_ticks: net.max_delay_ticks,
        })
    }

    pub fn model_and_acl(&self) -> Result<(ModelDefinition, AclRuleSet), ConfigError> {
        let model_path = self.data_dir.join(MODEL_FILE);
        let acl_path = self.data_dir.join(ACL_FILE);
        let malformed = |path: &Path, e: bcer2_core::model::ModelError| ConfigError::Malformed {
            path: path.to_owned(),
            problem: e.to_string(),
        };
        let model = parse_model(&fs::read_to_string(&model_path).map_err(io_err(&model_path))?)
            .map_err(|e| malformed(&model_path, e))?;
        let acl = parse_acl(&fs::read_to_string(&acl_path).map_err(io_err(&acl_path))?, &model)
            .map_err(|e| malformed(&acl_path, e))?;
        Ok((model, acl))
    }

    /// Public cards registered with this node.
    pub fn cards(&self) -> Result<Vec<IdCard>, ConfigError> {
        let dir = self.data_dir.join(CARDS_DIR);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<_> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bcid"))
            .collect();
        paths.sort();
        paths.iter().map(|p| load_card(p).map_err(ConfigError::from)).collect()
    }

    /// Stores the public half of `card` under `cards/` unless already there.
    pub fn remember_card(&self, card: &IdCard) -> Result<(), ConfigError> {
        let dir = self.data_dir.join(CARDS_DIR);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("{}.bcid", card.card_id));
        if !path.exists() {
            save_card(&card.public(), &path)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InitOptions {
    pub network_id: String,
    pub validators: usize,
    /// Defaults to a majority of the roster.
    pub quorum: Option<usize>,
    pub max_delay_ticks: u64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions { network_id: "bcer2".into(), validators: 11, quorum: None, max_delay_ticks: 2 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InitReport {
    pub data_dir: PathBuf,
    pub network_id: String,
    pub validators: Vec<String>,
    pub quorum: usize,
    pub authority_public_key: PublicKey,
    pub genesis_hash: HashDigest,
}

/// Writes a fresh network into `dir`: roster with new validator keys,
/// registration authority key, bundled model and ACL, and the genesis block.
pub fn init_data_dir(dir: &Path, opts: &InitOptions) -> Result<InitReport, ConfigError> {
    if dir.join(NETWORK_FILE).exists() {
        return Err(ConfigError::AlreadyInitialized(dir.to_owned()));
    }
    let n = opts.validators;
    let quorum = opts.quorum.unwrap_or_else(|| majority(n));
    if n == 0 || quorum < majority(n) || quorum > n {
        return Err(ConfigError::Invalid(format!("quorum {quorum} does not fit {n} validators")));
    }
    if opts.network_id.trim().is_empty() {
        return Err(ConfigError::Invalid("network id is empty".into()));
    }
    fs::create_dir_all(dir.join(CARDS_DIR)).map_err(io_err(dir))?;

    let ids = validator_ids(n);
    let roster = RosterFile {
        validators: ids
            .iter()
            .map(|id| {
                let key = KeyPair::generate(&mut OsRng);
                RosterEntry { id: id.clone(), public_key: key.public_key(), secret_seed: hex::encode(key.seed()) }
            })
            .collect(),
    };
    let authority = KeyPair::generate(&mut OsRng);
    let created_ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or_default();
    let genesis = make_genesis(&opts.network_id, created_ms).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let net = NetworkFile {
        network_id: opts.network_id.clone(),
        quorum,
        validators: ids.clone(),
        authority_public_key: authority.public_key(),
        max_delay_ticks: opts.max_delay_ticks,
        created_ms,
    };

    write_file(&dir.join(ROSTER_FILE), serde_json::to_string_pretty(&roster).expect("roster serializes"))?;
    write_file(&dir.join(AUTHORITY_FILE), format!("{}\n", hex::encode(authority.seed())))?;
    write_file(&dir.join(MODEL_FILE), DEFAULT_MODEL_SOURCE)?;
    write_file(&dir.join(ACL_FILE), DEFAULT_ACL_SOURCE)?;
    let chain_path = dir.join(CHAIN_FILE);
    let mut store = ChainStore::open(dir).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if store.persisted_height().is_some() {
        return Err(ConfigError::AlreadyInitialized(chain_path));
    }
    store.persist_block(&genesis).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    // Written last: its presence marks a complete data directory.
    write_file(&dir.join(NETWORK_FILE), serde_json::to_string_pretty(&net).expect("network serializes"))?;

    Ok(InitReport {
        data_dir: dir.to_owned(),
        network_id: net.network_id,
        validators: ids,
        quorum,
        authority_public_key: net.authority_public_key,
        genesis_hash: genesis.hash(),
    })
}

pub fn load_authority(dir: &Path) -> Result<KeyPair, ConfigError> {
    let path = dir.join(AUTHORITY_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut seed = [0u8; 32];
    hex::decode_to_slice(text.trim(), &mut seed)
        .map_err(|e| ConfigError::Malformed { path: path.clone(), problem: e.to_string() })?;
    Ok(KeyPair::from_seed(seed))
}

/// Issues a card signed by the directory's registration authority and
/// records its public half under `cards/`. Returns the holder copy.
pub fn issue_card(
    dir: &Path,
    participant_type: &str,
    participant_ref: &str,
    role: Role,
    endpoint: &str,
) -> Result<IdCard, ConfigError> {
    let net: NetworkFile = read_json(&dir.join(NETWORK_FILE))?;
    let authority = load_authority(dir)?;
    if authority.public_key() != net.authority_public_key {
        return Err(ConfigError::Invalid("authority.key does not match network.json".into()));
    }
    let card = bcer2_core::identity::issue_card(
        &authority,
        participant_type,
        participant_ref,
        role,
        ConnectionProfile::new(net.network_id, endpoint),
    )?;
    let cards = dir.join(CARDS_DIR);
    fs::create_dir_all(&cards).map_err(io_err(&cards))?;
    save_card(&card.public(), cards.join(format!("{}.bcid", card.card_id)))?;
    Ok(card)
}
