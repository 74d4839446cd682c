//! Multiclass prediction by a binary tree of linear classifiers.
//!
//! Each internal node holds a two-class model trained on the samples whose
//! labels fall in the node's class set, with the left child's classes
//! relabeled 0 and the right child's 1. Prediction descends left when the
//! node scores class 0 at least as high as class 1.
//!
//! Skeletons are written as nested pairs, e.g. `[[0, 1], [2, [3, 4]]]`.
//! Trained trees are stored as `tree.json` plus one PVC1 file per internal
//! node under `nodes/`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::model::{predict, LossKind, ParamVector};
use crate::trainer::{run_indexed, train, TrainingConfig};

/// Tree shape without classifiers: a class id or a pair of subtrees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Skeleton {
    Leaf(usize),
    Split(Box<[Skeleton; 2]>),
}

impl Skeleton {
    pub fn split(left: Skeleton, right: Skeleton) -> Self {
        Skeleton::Split(Box::new([left, right]))
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidTree(e.to_string()))
    }

    /// Balanced halves in class order; odd sets put the extra class left.
    pub fn balanced(classes: &[usize]) -> Self {
        match classes {
            [c] => Skeleton::Leaf(*c),
            _ => {
                let mid = classes.len().div_ceil(2);
                Skeleton::split(
                    Self::balanced(&classes[..mid]),
                    Self::balanced(&classes[mid..]),
                )
            }
        }
    }

    /// Ten-class default: vehicles {0, 1, 8, 9} against animals {2..=7},
    /// each side then split into balanced halves.
    pub fn vehicles_animals() -> Self {
        Skeleton::split(
            Self::balanced(&[0, 1, 8, 9]),
            Self::balanced(&[2, 3, 4, 5, 6, 7]),
        )
    }

    fn classes(&self) -> Vec<usize> {
        match self {
            Skeleton::Leaf(c) => vec![*c],
            Skeleton::Split(kids) => {
                let mut v = kids[0].classes();
                v.extend(kids[1].classes());
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        class: usize,
    },
    Split {
        classes: Vec<usize>,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
        classifier: Option<ParamVector>,
    },
}

impl TreeNode {
    fn from_skeleton(s: &Skeleton) -> Self {
        match s {
            Skeleton::Leaf(c) => TreeNode::Leaf { class: *c },
            Skeleton::Split(kids) => {
                let mut classes = s.classes();
                classes.sort_unstable();
                TreeNode::Split {
                    classes,
                    left: Box::new(Self::from_skeleton(&kids[0])),
                    right: Box::new(Self::from_skeleton(&kids[1])),
                    classifier: None,
                }
            }
        }
    }

    pub fn classes(&self) -> Vec<usize> {
        match self {
            TreeNode::Leaf { class } => vec![*class],
            TreeNode::Split { classes, .. } => classes.clone(),
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Internal nodes in preorder with their path names.
    fn internal_nodes<'a>(&'a self, path: String, out: &mut Vec<(String, &'a TreeNode)>) {
        if let TreeNode::Split { left, right, .. } = self {
            out.push((path.clone(), self));
            left.internal_nodes(format!("{path}.L"), out);
            right.internal_nodes(format!("{path}.R"), out);
        }
    }

    /// Assigns classifiers to internal nodes in preorder.
    fn assign_classifiers(&mut self, source: &mut impl Iterator<Item = ParamVector>) {
        if let TreeNode::Split {
            left,
            right,
            classifier,
            ..
        } = self
        {
            *classifier = source.next();
            left.assign_classifiers(source);
            right.assign_classifiers(source);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNet {
    n_classes: usize,
    root: TreeNode,
}

impl TreeNet {
    /// Untrained tree over classes `0..n_classes`.
    pub fn from_skeleton(skeleton: &Skeleton, n_classes: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in skeleton.classes() {
            if c >= n_classes {
                return Err(Error::InvalidTree(format!(
                    "class {c} outside 0..{n_classes}"
                )));
            }
            if !seen.insert(c) {
                return Err(Error::InvalidTree(format!("class {c} appears in two leaves")));
            }
        }
        if seen.len() != n_classes {
            let missing: Vec<usize> = (0..n_classes).filter(|c| !seen.contains(c)).collect();
            return Err(Error::InvalidTree(format!("classes {missing:?} have no leaf")));
        }
        if let Skeleton::Leaf(_) = skeleton {
            return Err(Error::InvalidTree("root must be a split".into()));
        }
        Ok(Self {
            n_classes,
            root: TreeNode::from_skeleton(skeleton),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn internal_count(&self) -> usize {
        let mut v = Vec::new();
        self.root.internal_nodes("root".into(), &mut v);
        v.len()
    }

    pub fn trained_count(&self) -> usize {
        let mut v = Vec::new();
        self.root.internal_nodes("root".into(), &mut v);
        v.iter()
            .filter(|(_, n)| matches!(n, TreeNode::Split { classifier: Some(_), .. }))
            .count()
    }

    /// Sets every internal node's classifier in preorder.
    pub fn set_classifiers(&mut self, classifiers: Vec<ParamVector>) -> Result<()> {
        let expected = self.internal_count();
        if expected != classifiers.len() {
            return Err(Error::InvalidTree(format!(
                "{} classifiers for {expected} internal nodes",
                classifiers.len()
            )));
        }
        if classifiers.iter().any(|p| p.n_classes() != 2) {
            return Err(Error::InvalidTree("node classifiers must have 2 classes".into()));
        }
        self.root.assign_classifiers(&mut classifiers.into_iter());
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("nodes"))?;
        let mut nodes = Vec::new();
        self.root.internal_nodes("root".into(), &mut nodes);
        let mut records = Vec::new();
        for (id, (path, node)) in nodes.iter().enumerate() {
            let TreeNode::Split { classes, left, right, classifier } = node else {
                unreachable!()
            };
            let file = format!("nodes/node_{id}.pvc");
            let Some(p) = classifier else {
                return Err(Error::InvalidTree(format!("node {path} is untrained")));
            };
            p.save(&dir.join(&file))?;
            records.push(NodeRecord {
                id,
                path: path.clone(),
                classes: classes.clone(),
                left: left.classes(),
                right: right.classes(),
                params: file,
            });
        }
        let doc = TreeFile {
            n_classes: self.n_classes,
            skeleton: skeleton_of(&self.root),
            nodes: records,
        };
        fs::write(dir.join("tree.json"), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let doc: TreeFile = serde_json::from_str(&fs::read_to_string(dir.join("tree.json"))?)?;
        let mut tree = Self::from_skeleton(&doc.skeleton, doc.n_classes)?;
        let mut records = doc.nodes;
        records.sort_by_key(|r| r.id);
        let classifiers = records
            .iter()
            .map(|r| ParamVector::load(&dir.join(&r.params)))
            .collect::<Result<Vec<_>>>()?;
        tree.set_classifiers(classifiers)?;
        Ok(tree)
    }
}

fn skeleton_of(node: &TreeNode) -> Skeleton {
    match node {
        TreeNode::Leaf { class } => Skeleton::Leaf(*class),
        TreeNode::Split { left, right, .. } => Skeleton::split(skeleton_of(left), skeleton_of(right)),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    path: String,
    classes: Vec<usize>,
    left: Vec<usize>,
    right: Vec<usize>,
    params: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeFile {
    n_classes: usize,
    skeleton: Skeleton,
    nodes: Vec<NodeRecord>,
}

/// Trains every internal node of `skeleton` from zero parameters.
pub fn train_tree(
    skeleton: &TreeNet,
    ds: &FeatureDataset,
    kind: LossKind,
    cfg: &TrainingConfig,
    workers: usize,
) -> Result<TreeNet> {
    if ds.n_classes() != skeleton.n_classes {
        return Err(Error::DimensionMismatch {
            location: "dataset classes vs tree".into(),
            expected: skeleton.n_classes,
            found: ds.n_classes(),
        });
    }
    let mut nodes = Vec::new();
    skeleton.root.internal_nodes("root".into(), &mut nodes);
    let mut jobs = Vec::with_capacity(nodes.len());
    for (path, node) in &nodes {
        let TreeNode::Split { left, right, .. } = node else {
            unreachable!()
        };
        let left_set: BTreeSet<usize> = left.classes().into_iter().collect();
        let right_set: BTreeSet<usize> = right.classes().into_iter().collect();
        let subset = ds
            .relabel(2, |l| {
                if left_set.contains(&l) {
                    Some(0)
                } else if right_set.contains(&l) {
                    Some(1)
                } else {
                    None
                }
            })?
            .ok_or_else(|| Error::EmptyTreeNode { node: path.clone() })?;
        jobs.push(subset);
    }
    let d = ds.feature_dim();
    let classifiers = run_indexed(jobs.len(), workers, |i| {
        train(&ParamVector::zeros(d, 2), &jobs[i], None, kind, cfg).map(|(p, _)| p)
    })?;
    let mut tree = skeleton.clone();
    tree.set_classifiers(classifiers)?;
    Ok(tree)
}

pub fn tree_predict(tree: &TreeNet, x: &[f32]) -> Result<usize> {
    let mut node = &tree.root;
    loop {
        match node {
            TreeNode::Leaf { class } => return Ok(*class),
            TreeNode::Split {
                left,
                right,
                classifier,
                ..
            } => {
                let p = classifier
                    .as_ref()
                    .ok_or_else(|| Error::InvalidTree("tree is not trained".into()))?;
                let s = predict(p, x)?;
                node = if s[0] >= s[1] { left } else { right };
            }
        }
    }
}

pub fn tree_accuracy(tree: &TreeNet, ds: &FeatureDataset) -> Result<f64> {
    let mut correct = 0;
    for i in 0..ds.n_samples() {
        if tree_predict(tree, ds.row(i))? == ds.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.n_samples() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthesize_dataset;
    use crate::model::accuracy;

    fn constant(left: bool, d: usize) -> ParamVector {
        let b = if left { [1.0, 0.0] } else { [0.0, 1.0] };
        let mut v = vec![0.0; 2 * d];
        v.extend_from_slice(&b);
        ParamVector::new(d, 2, v).unwrap()
    }

    #[test]
    fn skeleton_parsing_and_validation() {
        let s = Skeleton::parse("[[0, 1], [2, [3, 4]]]").unwrap();
        let t = TreeNet::from_skeleton(&s, 5).unwrap();
        assert_eq!(t.internal_count(), 4);
        assert_eq!(t.depth(), 3);
        assert!(TreeNet::from_skeleton(&s, 6).is_err());
        assert!(TreeNet::from_skeleton(&Skeleton::parse("[[0, 1], [1, 2]]").unwrap(), 3).is_err());
        assert!(TreeNet::from_skeleton(&Skeleton::Leaf(0), 1).is_err());
        assert!(Skeleton::parse("[0, 1, 2]").is_err());
    }

    #[test]
    fn default_ten_class_tree() {
        let s = Skeleton::vehicles_animals();
        let t = TreeNet::from_skeleton(&s, 10).unwrap();
        assert_eq!(t.internal_count(), 9);
        let TreeNode::Split { left, right, .. } = t.root() else { panic!() };
        assert_eq!(left.classes(), vec![0, 1, 8, 9]);
        assert_eq!(right.classes(), vec![2, 3, 4, 5, 6, 7]);
        assert_eq!(
            Skeleton::balanced(&[2, 3, 4]),
            Skeleton::split(Skeleton::split(Skeleton::Leaf(2), Skeleton::Leaf(3)), Skeleton::Leaf(4))
        );
    }

    #[test]
    fn forced_left_routing_reaches_leftmost_leaf() {
        let s = Skeleton::parse("[[3, 1], [0, 2]]").unwrap();
        let mut t = TreeNet::from_skeleton(&s, 4).unwrap();
        t.set_classifiers(vec![constant(true, 2); 3]).unwrap();
        assert_eq!(tree_predict(&t, &[5.0, -1.0]).unwrap(), 3);
        t.set_classifiers(vec![constant(false, 2); 3]).unwrap();
        assert_eq!(tree_predict(&t, &[5.0, -1.0]).unwrap(), 2);
    }

    #[test]
    fn ties_route_left() {
        let s = Skeleton::parse("[0, 1]").unwrap();
        let mut t = TreeNet::from_skeleton(&s, 2).unwrap();
        t.set_classifiers(vec![ParamVector::zeros(1, 2)]).unwrap();
        assert_eq!(tree_predict(&t, &[1.0]).unwrap(), 0);
    }

    #[test]
    fn binary_tree_equals_single_classifier() {
        let ds = synthesize_dataset(60, 3, 2, 3.0, 4).unwrap();
        let cfg = TrainingConfig { epochs: 20, ..Default::default() };
        let kind = LossKind::SoftmaxCrossEntropy;
        let t = TreeNet::from_skeleton(&Skeleton::parse("[0, 1]").unwrap(), 2).unwrap();
        let trained = train_tree(&t, &ds, kind, &cfg, 1).unwrap();
        let (flat, _) = train(&ParamVector::zeros(3, 2), &ds, None, kind, &cfg).unwrap();
        let TreeNode::Split { classifier: Some(p), .. } = trained.root() else { panic!() };
        assert_eq!(p, &flat);
        for i in 0..ds.n_samples() {
            let s = predict(&flat, ds.row(i)).unwrap();
            let expected = if s[0] >= s[1] { 0 } else { 1 };
            assert_eq!(tree_predict(&trained, ds.row(i)).unwrap(), expected);
        }
    }

    #[test]
    fn empty_node_is_reported() {
        // Node root.R covers classes {1, 2}, neither of which occurs.
        let ds = FeatureDataset::new(1, 3, vec![0.0, 1.0], vec![0, 0]).unwrap();
        let t = TreeNet::from_skeleton(&Skeleton::parse("[0, [1, 2]]").unwrap(), 3).unwrap();
        match train_tree(&t, &ds, LossKind::SoftmaxCrossEntropy, &TrainingConfig::default(), 1) {
            Err(Error::EmptyTreeNode { node }) => assert_eq!(node, "root.R"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tree_tracks_flat_softmax_on_separable_data() {
        let all = synthesize_dataset(1600, 8, 4, 4.0, 21).unwrap();
        let train_set = all.slice(0, 1200).unwrap();
        let test_set = all.slice(1200, 1600).unwrap();
        let cfg = TrainingConfig { epochs: 60, ..Default::default() };
        let kind = LossKind::SoftmaxCrossEntropy;
        let t = TreeNet::from_skeleton(&Skeleton::balanced(&[0, 1, 2, 3]), 4).unwrap();
        let trained = train_tree(&t, &train_set, kind, &cfg, 2).unwrap();
        let (flat, _) = train(&ParamVector::zeros(8, 4), &train_set, None, kind, &cfg).unwrap();
        let tree_acc = tree_accuracy(&trained, &test_set).unwrap();
        let flat_acc = accuracy(&flat, &test_set).unwrap();
        assert!((tree_acc - flat_acc).abs() <= 0.05, "tree {tree_acc} flat {flat_acc}");
    }

    #[test]
    fn save_and_load() {
        let ds = synthesize_dataset(100, 2, 3, 2.0, 1).unwrap();
        let t = TreeNet::from_skeleton(&Skeleton::balanced(&[0, 1, 2]), 3).unwrap();
        let trained =
            train_tree(&t, &ds, LossKind::SoftmaxCrossEntropy, &TrainingConfig { epochs: 5, ..Default::default() }, 1)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        trained.save(dir.path()).unwrap();
        assert!(dir.path().join("nodes/node_1.pvc").exists());
        assert_eq!(TreeNet::load(dir.path()).unwrap(), trained);
        assert!(t.save(dir.path()).is_err());
    }
}
