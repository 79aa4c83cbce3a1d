use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::messages::Advertisement;

/// Service-graph chains and the directory of advertised AKs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ServiceGraph {
    pub chains: BTreeMap<String, Vec<String>>,
    pub directory: BTreeMap<String, Advertisement>,
}

impl ServiceGraph {
    pub fn add_member(&mut self, chain: &str, vf_id: &str) {
        let members = self.chains.entry(chain.to_string()).or_default();
        if !members.iter().any(|m| m == vf_id) {
            members.push(vf_id.to_string());
        }
    }

    pub fn chain_of(&self, vf_id: &str) -> Option<&str> {
        self.chains
            .iter()
            .find(|(_, members)| members.iter().any(|m| m == vf_id))
            .map(|(c, _)| c.as_str())
    }

    /// Other members of `vf_id`'s chain, in join order.
    pub fn peers_of(&self, vf_id: &str) -> Vec<String> {
        self.chain_of(vf_id)
            .and_then(|c| self.chains.get(c))
            .map(|m| m.iter().filter(|p| *p != vf_id).cloned().collect())
            .unwrap_or_default()
    }

    pub fn advertise(&mut self, ad: Advertisement) {
        self.directory.insert(ad.vf_id.clone(), ad);
    }

    pub fn remove(&mut self, vf_id: &str) -> Option<Advertisement> {
        self.directory.remove(vf_id)
    }
}
