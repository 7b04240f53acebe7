use std::collections::{BTreeSet, HashMap};

use fvsr_tensor::{Gradients, Graph, Rng, Scalar, Tensor, Var};

use crate::datametrics::AnyTensor;
use crate::{CoreError, Result};

/// Parameter partition used for freezing and for head re-initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Encoder,
    /// Decoder layers up to the last feature map.
    Trunk,
    /// Channel expansion (if learned) and the output convolution.
    Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
}

/// Ordered named parameters. Order is creation order and fixes every
/// iteration (initialization draws, gradient reduction, serialization).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }
}

const WEIGHT_GAIN: f64 = 1.732_050_807_568_877_2;

/// Fan-in scaled uniform `U(-1/√fan_in, 1/√fan_in)`.
pub fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -bound, bound, rng)
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, group: Group, value: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, group, value });
    }

    /// Adds a `c_out × c_in × k × k` convolution `name.w` with bias `name.b`.
    /// Weights are drawn from `U(±√(3/fan_in))` (unit gain), biases from
    /// `U(±1/√fan_in)`.
    pub fn add_conv(
        &mut self,
        name: &str,
        group: Group,
        c_in: usize,
        c_out: usize,
        k: usize,
        rng: &mut Rng,
    ) {
        let fan_in = c_in * k * k;
        let w = fan_in_uniform(&[c_out, c_in, k, k], fan_in, rng).map(|x| x * T::of(WEIGHT_GAIN));
        self.insert(format!("{name}.w"), group, w);
        self.insert(
            format!("{name}.b"),
            group,
            fan_in_uniform(&[c_out], fan_in, rng),
        );
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.params[i].value)
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Order-sensitive hash over the parameters of the given groups.
    pub fn checksum(&self, groups: &[Group]) -> u64 {
        self.params
            .iter()
            .filter(|p| groups.contains(&p.group))
            .fold(0xcbf2_9ce4_8422_2325u64, |h, p| {
                (h ^ p.value.checksum()).wrapping_mul(0x0000_0100_0000_01b3)
            })
    }

    /// Places every parameter on the tape; groups in `trainable` become
    /// variables, all others constants that cannot receive gradient.
    pub fn bind(&self, g: &mut Graph<T>, trainable: &BTreeSet<Group>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable.contains(&p.group)))
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// Named entries with `prefix.` prepended, for the tensor container.
    pub fn to_entries(&self, prefix: &str) -> Vec<(String, AnyTensor)> {
        self.params
            .iter()
            .map(|p| (format!("{prefix}.{}", p.name), AnyTensor::of(&p.value)))
            .collect()
    }

    /// Overwrites every parameter from `prefix.<name>` entries; shapes must match.
    pub fn load_entries(&mut self, prefix: &str, entries: &[(String, AnyTensor)]) -> Result<()> {
        for p in &mut self.params {
            let key = format!("{prefix}.{}", p.name);
            let t: Tensor<T> = crate::datametrics::container::find(entries, &key)?.to();
            if t.shape() != p.value.shape() {
                return Err(CoreError::Contract(format!(
                    "checkpoint entry `{key}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t;
        }
        Ok(())
    }
}

/// Tape handles of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn empty() -> Self {
        Self {
            vars: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient per parameter, in store order; `None` for constants.
    pub fn grads<T: Scalar>(&self, g: &Graph<T>, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars
            .iter()
            .map(|&v| g.requires_grad(v).then(|| grads.wrt(g, v)))
            .collect()
    }
}
