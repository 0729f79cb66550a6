//! Spatial assemblies as kinematic constraint graphs.
//!
//! Vertices are part instances drawn from a [`PartCatalog`]; edges are
//! [`Joint`]s recording which contact point of each part is attached. An
//! [`AssemblyAction`] is a signed edge set: `connect` is set union,
//! `disconnect` is set difference.
//!
//! Assemblies that differ only by swapping identical parts or by applying a
//! declared per-part contact symmetry are equivalent; [`Assembly::canonical_key`]
//! gives every equivalence class a single byte-string key.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kinematics::{quaternion_from_wxyz, KinematicsError, Pose, PoseRecord};

pub type InstanceId = u32;
pub type ContactId = u32;

/// Enumeration budget for canonicalization and symmetry searches.
pub const MAX_GROUP_SIZE: u128 = 1_000_000;

/// Contact-symmetry rotations must map contact positions onto each other
/// within this distance (meters).
const SYMMETRY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("invalid part catalog: {0}")]
    InvalidCatalog(String),
    #[error("unknown part type `{0}`")]
    UnknownPartType(String),
    #[error("duplicate instance id {0} in scene")]
    DuplicateInstance(InstanceId),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("instance {instance} has no contact point {contact}")]
    UnknownContact {
        instance: InstanceId,
        contact: ContactId,
    },
    #[error("joint connects instance {0} to itself")]
    SelfJoint(InstanceId),
    #[error("contact {contact} of instance {instance} is used by more than one joint")]
    ContactInUse {
        instance: InstanceId,
        contact: ContactId,
    },
    #[error("connect conflict: {0}")]
    ConnectConflict(String),
    #[error("disconnect of missing joint {0}")]
    DisconnectMissing(Joint),
    #[error("assemblies are not comparable: {0}")]
    NotComparable(String),
    #[error("action has an empty delta")]
    EmptyDelta,
    #[error("assemblies belong to different scenes")]
    SceneMismatch,
    #[error("symmetry group of size {0} exceeds the enumeration limit")]
    SymmetryGroupTooLarge(u128),
    #[error("malformed canonical key: {0}")]
    BadKey(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

pub type Result<T, E = AssemblyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub id: ContactId,
    pub local_pose: Pose,
}

/// A contact-point permutation and the body rotation that realizes it.
#[derive(Debug, Clone, PartialEq)]
pub struct Symmetry {
    pub permutation: Vec<ContactId>,
    pub rotation: nalgebra::UnitQuaternion<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartType {
    pub name: String,
    pub contact_points: Vec<ContactPoint>,
    /// Always contains the identity as element 0.
    pub symmetries: Vec<Symmetry>,
}

impl PartType {
    pub fn contact(&self, id: ContactId) -> Option<&ContactPoint> {
        self.contact_points.get(id as usize)
    }
}

// Wire structs for the catalog document.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactPointDef {
    pub id: ContactId,
    pub translation: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub rotation: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryDef {
    pub permutation: Vec<ContactId>,
    #[serde(default = "identity_wxyz")]
    pub rotation: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartTypeDef {
    pub name: String,
    pub contact_points: Vec<ContactPointDef>,
    #[serde(default)]
    pub symmetries: Vec<SymmetryDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogDef {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_true")]
    pub exclusive_contacts: bool,
    pub part_types: Vec<PartTypeDef>,
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn default_true() -> bool {
    true
}

/// The vertex attribute schema: part types, their contact points and their
/// declared symmetry groups.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CatalogDef", into = "CatalogDef")]
pub struct PartCatalog {
    name: String,
    exclusive_contacts: bool,
    part_types: Vec<PartType>,
    index: HashMap<String, usize>,
    hash: String,
}

impl PartialEq for PartCatalog {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash
    }
}

impl TryFrom<CatalogDef> for PartCatalog {
    type Error = AssemblyError;

    fn try_from(def: CatalogDef) -> Result<Self> {
        let hash = {
            let bytes = serde_json::to_vec(&def).expect("catalog serializes");
            hex::encode(Sha256::digest(&bytes))
        };
        let mut part_types = Vec::with_capacity(def.part_types.len());
        let mut index = HashMap::new();
        for (n, pt) in def.part_types.into_iter().enumerate() {
            if index.insert(pt.name.clone(), n).is_some() {
                return Err(AssemblyError::InvalidCatalog(format!(
                    "duplicate part type `{}`",
                    pt.name
                )));
            }
            part_types.push(build_part_type(pt)?);
        }
        Ok(PartCatalog {
            name: def.name,
            exclusive_contacts: def.exclusive_contacts,
            part_types,
            index,
            hash,
        })
    }
}

impl From<PartCatalog> for CatalogDef {
    fn from(c: PartCatalog) -> Self {
        c.to_def()
    }
}

fn build_part_type(def: PartTypeDef) -> Result<PartType> {
    let invalid = |msg: String| AssemblyError::InvalidCatalog(format!("part `{}`: {msg}", def.name));
    let mut contact_points = Vec::with_capacity(def.contact_points.len());
    for (n, cp) in def.contact_points.iter().enumerate() {
        if cp.id as usize != n {
            return Err(invalid(format!(
                "contact ids must be contiguous from 0 in order, found {} at position {n}",
                cp.id
            )));
        }
        let rotation = quaternion_from_wxyz(cp.rotation)?;
        contact_points.push(ContactPoint {
            id: cp.id,
            local_pose: Pose::new(cp.translation.into(), rotation),
        });
    }
    let n_contacts = contact_points.len();
    let identity: Vec<ContactId> = (0..n_contacts as ContactId).collect();
    let mut symmetries = vec![Symmetry {
        permutation: identity.clone(),
        rotation: nalgebra::UnitQuaternion::identity(),
    }];
    for sym in &def.symmetries {
        let mut seen = vec![false; n_contacts];
        if sym.permutation.len() != n_contacts {
            return Err(invalid(format!(
                "symmetry {:?} does not permute {n_contacts} contacts",
                sym.permutation
            )));
        }
        for &c in &sym.permutation {
            match seen.get_mut(c as usize) {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(invalid(format!(
                        "symmetry {:?} is not a permutation",
                        sym.permutation
                    )))
                }
            }
        }
        let rotation = quaternion_from_wxyz(sym.rotation)?;
        for (from, &to) in sym.permutation.iter().enumerate() {
            let moved = rotation * contact_points[from].local_pose.translation;
            let target = contact_points[to as usize].local_pose.translation;
            if (moved - target).norm() > SYMMETRY_TOLERANCE {
                return Err(invalid(format!(
                    "symmetry {:?}: rotation does not carry contact {from} onto contact {to}",
                    sym.permutation
                )));
            }
        }
        if sym.permutation == identity {
            continue;
        }
        if symmetries.iter().any(|s| s.permutation == sym.permutation) {
            return Err(invalid(format!(
                "symmetry {:?} declared twice",
                sym.permutation
            )));
        }
        symmetries.push(Symmetry {
            permutation: sym.permutation.clone(),
            rotation,
        });
    }
    let perms: BTreeSet<&[ContactId]> = symmetries.iter().map(|s| s.permutation.as_slice()).collect();
    for a in &symmetries {
        let inv = invert_permutation(&a.permutation);
        if !perms.contains(inv.as_slice()) {
            return Err(invalid(format!(
                "symmetries are not closed under inverse ({:?})",
                a.permutation
            )));
        }
        for b in &symmetries {
            let ab = compose_permutations(&a.permutation, &b.permutation);
            if !perms.contains(ab.as_slice()) {
                return Err(invalid(format!(
                    "symmetries are not closed under composition ({:?} after {:?})",
                    a.permutation, b.permutation
                )));
            }
        }
    }
    Ok(PartType {
        name: def.name,
        contact_points,
        symmetries,
    })
}

/// `(a ∘ b)(i) = a(b(i))`.
pub fn compose_permutations(a: &[ContactId], b: &[ContactId]) -> Vec<ContactId> {
    b.iter().map(|&i| a[i as usize]).collect()
}

pub fn invert_permutation(p: &[ContactId]) -> Vec<ContactId> {
    let mut inv = vec![0; p.len()];
    for (i, &v) in p.iter().enumerate() {
        inv[v as usize] = i as ContactId;
    }
    inv
}

impl PartCatalog {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let def: CatalogDef =
            toml::from_str(text).map_err(|e| AssemblyError::InvalidCatalog(e.to_string()))?;
        Self::try_from(def)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&self.to_def()).expect("catalog serializes to TOML")
    }

    pub fn to_def(&self) -> CatalogDef {
        CatalogDef {
            name: self.name.clone(),
            exclusive_contacts: self.exclusive_contacts,
            part_types: self
                .part_types
                .iter()
                .map(|pt| PartTypeDef {
                    name: pt.name.clone(),
                    contact_points: pt
                        .contact_points
                        .iter()
                        .map(|cp| {
                            let rec = PoseRecord::from(cp.local_pose);
                            ContactPointDef {
                                id: cp.id,
                                translation: rec.translation,
                                rotation: rec.rotation,
                            }
                        })
                        .collect(),
                    symmetries: pt
                        .symmetries
                        .iter()
                        .skip(1)
                        .map(|s| {
                            let q = s.rotation.quaternion();
                            SymmetryDef {
                                permutation: s.permutation.clone(),
                                rotation: [q.w, q.i, q.j, q.k],
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Whether each (instance, contact) may take part in at most one joint.
    pub fn exclusive_contacts(&self) -> bool {
        self.exclusive_contacts
    }

    /// SHA-256 of the catalog document, hex encoded.
    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    pub fn part_types(&self) -> &[PartType] {
        &self.part_types
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn part_type(&self, name: &str) -> Option<&PartType> {
        self.type_index(name).map(|i| &self.part_types[i])
    }

    pub fn contact_pose(&self, type_index: usize, contact: ContactId) -> Option<Pose> {
        self.part_types
            .get(type_index)?
            .contact(contact)
            .map(|c| c.local_pose)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartInstance {
    #[serde(rename = "instance")]
    pub instance_id: InstanceId,
    pub part_type: String,
}

/// The fixed universe of part instances an assembly is built from.
#[derive(Debug, Clone)]
pub struct Scene {
    catalog: Arc<PartCatalog>,
    instances: Vec<PartInstance>,
    /// Per instance (same order as `instances`): catalog type index.
    type_of: Vec<usize>,
    position: BTreeMap<InstanceId, usize>,
    /// Rank of each instance among instances of its type.
    rank: Vec<u32>,
    /// For each catalog type, the instance positions of that type.
    by_type: Vec<Vec<usize>>,
}

impl PartialEq for Scene {
    fn eq(&self, other: &Self) -> bool {
        self.instances == other.instances && self.catalog == other.catalog
    }
}

impl Scene {
    pub fn new(catalog: Arc<PartCatalog>, mut instances: Vec<PartInstance>) -> Result<Self> {
        instances.sort_by_key(|p| p.instance_id);
        let mut position = BTreeMap::new();
        let mut type_of = Vec::with_capacity(instances.len());
        let mut rank = Vec::with_capacity(instances.len());
        let mut by_type = vec![Vec::new(); catalog.part_types().len()];
        for (n, inst) in instances.iter().enumerate() {
            if position.insert(inst.instance_id, n).is_some() {
                return Err(AssemblyError::DuplicateInstance(inst.instance_id));
            }
            let t = catalog
                .type_index(&inst.part_type)
                .ok_or_else(|| AssemblyError::UnknownPartType(inst.part_type.clone()))?;
            type_of.push(t);
            rank.push(by_type[t].len() as u32);
            by_type[t].push(n);
        }
        Ok(Scene {
            catalog,
            instances,
            type_of,
            position,
            rank,
            by_type,
        })
    }

    pub fn catalog(&self) -> &Arc<PartCatalog> {
        &self.catalog
    }

    pub fn instances(&self) -> &[PartInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.instances.iter().map(|p| p.instance_id)
    }

    pub fn contains(&self, id: InstanceId) -> bool {
        self.position.contains_key(&id)
    }

    /// Catalog type index of an instance.
    pub fn part_type_of(&self, id: InstanceId) -> Option<usize> {
        self.position.get(&id).map(|&n| self.type_of[n])
    }

    fn check_joint(&self, j: &Joint) -> Result<()> {
        for (inst, contact) in [(j.part_a, j.contact_a), (j.part_b, j.contact_b)] {
            let t = self
                .part_type_of(inst)
                .ok_or(AssemblyError::UnknownInstance(inst))?;
            if self.catalog.part_types()[t].contact(contact).is_none() {
                return Err(AssemblyError::UnknownContact {
                    instance: inst,
                    contact,
                });
            }
        }
        Ok(())
    }

    /// Size of the combined symmetry group: permutations of identical
    /// instances times the per-instance contact symmetries.
    pub fn symmetry_group_size(&self) -> u128 {
        let mut size: u128 = 1;
        for members in &self.by_type {
            for k in 2..=members.len() as u128 {
                size = size.saturating_mul(k);
            }
        }
        for &t in &self.type_of {
            size = size.saturating_mul(self.catalog.part_types()[t].symmetries.len() as u128);
        }
        size
    }

    /// Enumerate every element of the combined symmetry group, calling `f`
    /// with the image of each joint set. Stops early when `f` returns `false`.
    fn for_each_image(
        &self,
        joints: &BTreeSet<Joint>,
        mut f: impl FnMut(&[(Slot, Slot)], &GroupElement) -> bool,
    ) -> Result<()> {
        let size = self.symmetry_group_size();
        if size > MAX_GROUP_SIZE {
            return Err(AssemblyError::SymmetryGroupTooLarge(size));
        }
        let type_perms: Vec<Vec<Vec<usize>>> = self
            .by_type
            .iter()
            .map(|members| permutations(members.len()))
            .collect();
        let sym_counts: Vec<usize> = self
            .type_of
            .iter()
            .map(|&t| self.catalog.part_types()[t].symmetries.len())
            .collect();
        let mut perm_choice = vec![0usize; type_perms.len()];
        let mut sym_choice = vec![0usize; self.instances.len()];
        let mut image: Vec<(Slot, Slot)> = Vec::with_capacity(joints.len());
        loop {
            let element = GroupElement {
                perm_choice: &perm_choice,
                sym_choice: &sym_choice,
                type_perms: &type_perms,
            };
            image.clear();
            for j in joints {
                let a = self.map_endpoint(j.part_a, j.contact_a, &element);
                let b = self.map_endpoint(j.part_b, j.contact_b, &element);
                image.push(if a <= b { (a, b) } else { (b, a) });
            }
            image.sort_unstable();
            if !f(&image, &element) {
                return Ok(());
            }
            // Mixed-radix increment: contact symmetries first, then instance permutations.
            if !increment(&mut sym_choice, |i| sym_counts[i])
                && !increment(&mut perm_choice, |t| type_perms[t].len())
            {
                return Ok(());
            }
        }
    }

    fn map_endpoint(&self, inst: InstanceId, contact: ContactId, g: &GroupElement) -> Slot {
        let pos = self.position[&inst];
        let t = self.type_of[pos];
        let sym = &self.catalog.part_types()[t].symmetries[g.sym_choice[pos]];
        let new_rank = g.type_perms[t][g.perm_choice[t]][self.rank[pos] as usize];
        Slot {
            type_index: t as u32,
            rank: new_rank as u32,
            contact: sym.permutation[contact as usize],
        }
    }

    fn slot_instance(&self, slot: &Slot) -> InstanceId {
        self.instances[self.by_type[slot.type_index as usize][slot.rank as usize]].instance_id
    }

    fn joints_from_slots(&self, slots: &[(Slot, Slot)]) -> BTreeSet<Joint> {
        slots
            .iter()
            .map(|(a, b)| {
                Joint::new(
                    self.slot_instance(a),
                    a.contact,
                    self.slot_instance(b),
                    b.contact,
                )
            })
            .collect()
    }

    fn serialize_slots(&self, slots: &[(Slot, Slot)]) -> CanonicalKey {
        let mut out = Vec::with_capacity(4 + slots.len() * 40);
        out.extend_from_slice(&(slots.len() as u32).to_be_bytes());
        for (a, b) in slots {
            for s in [a, b] {
                let name = self.catalog.part_types()[s.type_index as usize].name.as_bytes();
                out.extend_from_slice(&(name.len() as u32).to_be_bytes());
                out.extend_from_slice(name);
                out.extend_from_slice(&s.rank.to_be_bytes());
                out.extend_from_slice(&s.contact.to_be_bytes());
            }
        }
        CanonicalKey(out)
    }
}

/// A joint endpoint after relabeling: type, rank within type, contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Slot {
    type_index: u32,
    rank: u32,
    contact: ContactId,
}

struct GroupElement<'a> {
    perm_choice: &'a [usize],
    sym_choice: &'a [usize],
    type_perms: &'a [Vec<Vec<usize>>],
}

fn increment(digits: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for (i, d) in digits.iter_mut().enumerate() {
        *d += 1;
        if *d < radix(i) {
            return true;
        }
        *d = 0;
    }
    false
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..n).collect();
    let mut out = vec![cur.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot");
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

/// A kinematic joint: contact `contact_a` of `part_a` is rigidly attached to
/// contact `contact_b` of `part_b`. Stored with `part_a < part_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct Joint {
    pub part_a: InstanceId,
    pub contact_a: ContactId,
    pub part_b: InstanceId,
    pub contact_b: ContactId,
}

impl Joint {
    /// Normalizes orientation so that `part_a <= part_b`.
    pub fn new(part_a: InstanceId, contact_a: ContactId, part_b: InstanceId, contact_b: ContactId) -> Self {
        if part_a <= part_b {
            Joint {
                part_a,
                contact_a,
                part_b,
                contact_b,
            }
        } else {
            Joint {
                part_a: part_b,
                contact_a: contact_b,
                part_b: part_a,
                contact_b: contact_a,
            }
        }
    }

    pub fn touches(&self, inst: InstanceId, contact: ContactId) -> bool {
        (self.part_a == inst && self.contact_a == contact)
            || (self.part_b == inst && self.contact_b == contact)
    }
}

impl From<[u32; 4]> for Joint {
    fn from(v: [u32; 4]) -> Self {
        Joint::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Joint> for [u32; 4] {
    fn from(j: Joint) -> Self {
        [j.part_a, j.contact_a, j.part_b, j.contact_b]
    }
}

impl fmt::Display for Joint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}-{}.{}",
            self.part_a, self.contact_a, self.part_b, self.contact_b
        )
    }
}

/// Identifies an assembly up to declared symmetries. Displayed as hex.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct CanonicalKey(pub Vec<u8>);

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(&self.0))
    }
}

impl FromStr for CanonicalKey {
    type Err = AssemblyError;

    fn from_str(s: &str) -> Result<Self> {
        hex::decode(s)
            .map(CanonicalKey)
            .map_err(|e| AssemblyError::BadKey(e.to_string()))
    }
}

impl From<CanonicalKey> for String {
    fn from(k: CanonicalKey) -> Self {
        k.to_string()
    }
}

impl TryFrom<String> for CanonicalKey {
    type Error = AssemblyError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Connect,
    Disconnect,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Connect => "connect",
            Sign::Disconnect => "disconnect",
        })
    }
}

impl FromStr for Sign {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "connect" => Ok(Sign::Connect),
            "disconnect" => Ok(Sign::Disconnect),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

/// A signed partial kinematic graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyAction {
    pub sign: Sign,
    pub delta: BTreeSet<Joint>,
}

impl AssemblyAction {
    pub fn new(sign: Sign, delta: impl IntoIterator<Item = Joint>) -> Result<Self> {
        let delta: BTreeSet<Joint> = delta.into_iter().collect();
        if delta.is_empty() {
            return Err(AssemblyError::EmptyDelta);
        }
        Ok(Self { sign, delta })
    }

    pub fn connect(delta: impl IntoIterator<Item = Joint>) -> Result<Self> {
        Self::new(Sign::Connect, delta)
    }

    pub fn disconnect(delta: impl IntoIterator<Item = Joint>) -> Result<Self> {
        Self::new(Sign::Disconnect, delta)
    }

    /// Sign byte followed by the canonical key of the delta graph within `scene`.
    pub fn canonical_key(&self, scene: &Arc<Scene>) -> Result<CanonicalKey> {
        let delta = Assembly::from_joints_unchecked(scene.clone(), self.delta.clone());
        let mut bytes = vec![match self.sign {
            Sign::Connect => b'+',
            Sign::Disconnect => b'-',
        }];
        bytes.extend(delta.canonical_key()?.0);
        Ok(CanonicalKey(bytes))
    }
}

impl fmt::Display for AssemblyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.sign)?;
        for (n, j) in self.delta.iter().enumerate() {
            if n > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{j}")?;
        }
        f.write_str(")")
    }
}

/// A kinematic constraint graph over a fixed scene.
#[derive(Debug, Clone)]
pub struct Assembly {
    scene: Arc<Scene>,
    joints: BTreeSet<Joint>,
}

impl PartialEq for Assembly {
    fn eq(&self, other: &Self) -> bool {
        self.joints == other.joints
            && (Arc::ptr_eq(&self.scene, &other.scene) || self.scene == other.scene)
    }
}

impl Assembly {
    /// The state with no joints.
    pub fn empty(scene: Arc<Scene>) -> Self {
        Assembly {
            scene,
            joints: BTreeSet::new(),
        }
    }

    pub fn new(scene: Arc<Scene>, joints: impl IntoIterator<Item = Joint>) -> Result<Self> {
        let joints: BTreeSet<Joint> = joints.into_iter().collect();
        for j in &joints {
            if j.part_a == j.part_b {
                return Err(AssemblyError::SelfJoint(j.part_a));
            }
            scene.check_joint(j)?;
        }
        let s = Assembly { scene, joints };
        s.check_exclusive()?;
        Ok(s)
    }

    fn from_joints_unchecked(scene: Arc<Scene>, joints: BTreeSet<Joint>) -> Self {
        Assembly { scene, joints }
    }

    fn check_exclusive(&self) -> Result<()> {
        if !self.scene.catalog.exclusive_contacts() {
            return Ok(());
        }
        let mut used = BTreeSet::new();
        for j in &self.joints {
            for end in [(j.part_a, j.contact_a), (j.part_b, j.contact_b)] {
                if !used.insert(end) {
                    return Err(AssemblyError::ContactInUse {
                        instance: end.0,
                        contact: end.1,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn joints(&self) -> &BTreeSet<Joint> {
        &self.joints
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn contact_in_use(&self, inst: InstanceId, contact: ContactId) -> bool {
        self.joints.iter().any(|j| j.touches(inst, contact))
    }

    fn check_scene(&self, other: &Assembly) -> Result<()> {
        if Arc::ptr_eq(&self.scene, &other.scene) || self.scene == other.scene {
            Ok(())
        } else {
            Err(AssemblyError::SceneMismatch)
        }
    }

    /// `connect`: union with the delta; `disconnect`: set difference.
    pub fn apply(&self, action: &AssemblyAction) -> Result<Assembly> {
        if action.delta.is_empty() {
            return Err(AssemblyError::EmptyDelta);
        }
        match action.sign {
            Sign::Connect => {
                for j in &action.delta {
                    if self.joints.contains(j) {
                        return Err(AssemblyError::ConnectConflict(format!(
                            "joint {j} already present"
                        )));
                    }
                    if j.part_a == j.part_b {
                        return Err(AssemblyError::SelfJoint(j.part_a));
                    }
                    self.scene.check_joint(j)?;
                }
                let mut joints = self.joints.clone();
                joints.extend(action.delta.iter().copied());
                let next = Assembly::from_joints_unchecked(self.scene.clone(), joints);
                next.check_exclusive().map_err(|e| match e {
                    AssemblyError::ContactInUse { instance, contact } => {
                        AssemblyError::ConnectConflict(format!(
                            "contact {contact} of instance {instance} is already in use"
                        ))
                    }
                    other => other,
                })?;
                Ok(next)
            }
            Sign::Disconnect => {
                if let Some(missing) = action.delta.iter().find(|j| !self.joints.contains(j)) {
                    return Err(AssemblyError::DisconnectMissing(*missing));
                }
                let joints = self.joints.difference(&action.delta).copied().collect();
                Ok(Assembly::from_joints_unchecked(self.scene.clone(), joints))
            }
        }
    }

    /// The action taking `self` to `next`, when one joint set strictly
    /// contains the other.
    pub fn diff(&self, next: &Assembly) -> Result<AssemblyAction> {
        self.check_scene(next)?;
        if self.joints == next.joints {
            return Err(AssemblyError::NotComparable("assemblies are equal".into()));
        }
        if self.joints.is_subset(&next.joints) {
            AssemblyAction::connect(next.joints.difference(&self.joints).copied())
        } else if next.joints.is_subset(&self.joints) {
            AssemblyAction::disconnect(self.joints.difference(&next.joints).copied())
        } else {
            Err(AssemblyError::NotComparable(
                "neither joint set contains the other".into(),
            ))
        }
    }

    /// Partition of all instance ids by joint connectivity, each block
    /// sorted, blocks ordered by their smallest id.
    pub fn connected_components(&self) -> Vec<Vec<InstanceId>> {
        let n = self.scene.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for j in &self.joints {
            let a = find(&mut parent, self.scene.position[&j.part_a]);
            let b = find(&mut parent, self.scene.position[&j.part_b]);
            if a != b {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent[hi] = lo;
            }
        }
        let mut blocks: BTreeMap<usize, Vec<InstanceId>> = BTreeMap::new();
        for pos in 0..n {
            let root = find(&mut parent, pos);
            blocks
                .entry(root)
                .or_default()
                .push(self.scene.instances[pos].instance_id);
        }
        blocks.into_values().collect()
    }

    /// Whether a path of joints connects instances `i` and `j`.
    pub fn same_body(&self, i: InstanceId, j: InstanceId) -> Result<bool> {
        for id in [i, j] {
            if !self.scene.contains(id) {
                return Err(AssemblyError::UnknownInstance(id));
            }
        }
        if i == j {
            return Ok(true);
        }
        Ok(self
            .connected_components()
            .iter()
            .any(|block| block.contains(&i) && block.contains(&j)))
    }

    /// Adjacency-by-component lookup, computed once.
    pub fn component_index(&self) -> BTreeMap<InstanceId, usize> {
        let mut out = BTreeMap::new();
        for (n, block) in self.connected_components().into_iter().enumerate() {
            for id in block {
                out.insert(id, n);
            }
        }
        out
    }

    /// Lexicographic minimum, over the combined symmetry group, of the
    /// sorted relabeled joint list, serialized with length prefixes.
    pub fn canonical_key(&self) -> Result<CanonicalKey> {
        let mut best: Option<Vec<(Slot, Slot)>> = None;
        self.scene.for_each_image(&self.joints, |image, _| {
            if best.as_deref().is_none_or(|b| image < b) {
                best = Some(image.to_vec());
            }
            true
        })?;
        Ok(self.scene.serialize_slots(&best.unwrap_or_default()))
    }

    /// Distinct joint sets equivalent to this one under the symmetry group,
    /// starting with `self`.
    pub fn orbit(&self) -> Result<Vec<Assembly>> {
        let mut seen = BTreeSet::new();
        let mut out = vec![self.clone()];
        seen.insert(self.joints.clone());
        self.scene.for_each_image(&self.joints, |image, _| {
            let joints = self.scene.joints_from_slots(image);
            if seen.insert(joints.clone()) {
                out.push(Assembly::from_joints_unchecked(self.scene.clone(), joints));
            }
            true
        })?;
        Ok(out)
    }

    pub fn equivalent(&self, other: &Assembly) -> Result<bool> {
        self.check_scene(other)?;
        Ok(self.joints.len() == other.joints.len() && self.canonical_key()? == other.canonical_key()?)
    }

    /// Like [`Assembly::diff`], but `next` may be replaced by any member of
    /// its symmetry orbit. Returns the first comparable member in group
    /// enumeration order together with the action.
    pub fn diff_up_to_symmetry(&self, next: &Assembly) -> Result<(Assembly, AssemblyAction)> {
        self.check_scene(next)?;
        if let Ok(a) = self.diff(next) {
            return Ok((next.clone(), a));
        }
        let mut found = None;
        self.scene.for_each_image(&next.joints, |image, _| {
            let joints = self.scene.joints_from_slots(image);
            let candidate = Assembly::from_joints_unchecked(self.scene.clone(), joints);
            if let Ok(a) = self.diff(&candidate) {
                found = Some((candidate, a));
                false
            } else {
                true
            }
        })?;
        found.ok_or_else(|| {
            AssemblyError::NotComparable("no symmetric relabeling is comparable".into())
        })
    }
}
