use crate::data::corpus::MultimodalExample;
use crate::model::ModelInput;
use crate::tensor::Tensor;

/// Padded block of one feature modality: `[B × T × d]` plus masks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub data: Vec<f64>,
    pub max_len: usize,
    pub width: usize,
    pub masks: Vec<Vec<bool>>,
}

impl FeatureBlock {
    fn build(items: &[&Tensor]) -> Self {
        let max_len = items.iter().map(|t| t.rows()).max().unwrap_or(0);
        let width = items.first().map_or(0, |t| t.cols());
        let mut data = vec![0.0; items.len() * max_len * width];
        let mut masks = Vec::with_capacity(items.len());
        for (b, t) in items.iter().enumerate() {
            let off = b * max_len * width;
            data[off..off + t.numel()].copy_from_slice(t.data());
            masks.push((0..max_len).map(|i| i < t.rows()).collect());
        }
        Self {
            data,
            max_len,
            width,
            masks,
        }
    }

    fn example(&self, b: usize) -> Tensor {
        let n = self.max_len * self.width;
        Tensor::matrix(self.max_len, self.width, self.data[b * n..(b + 1) * n].to_vec())
            .expect("block shape is consistent")
    }
}

/// Padded minibatch. Id blocks are `[B × max_len]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub pad_id: usize,
    pub text: Vec<usize>,
    pub text_len: usize,
    pub text_masks: Vec<Vec<bool>>,
    pub audio: Option<FeatureBlock>,
    pub video: Option<FeatureBlock>,
    /// Summary plus `<eos>`, padded.
    pub targets: Vec<usize>,
    pub target_len: usize,
    /// Positions of the batch's examples in the input slice.
    pub source_index: Vec<usize>,
}

impl Batch {
    pub fn from_examples(examples: &[&MultimodalExample], pad_id: usize) -> Self {
        let text_len = examples.iter().map(|e| e.text.len()).max().unwrap_or(0);
        let mut text = vec![pad_id; examples.len() * text_len];
        let mut text_masks = Vec::with_capacity(examples.len());
        let target_seqs: Vec<Vec<usize>> = examples.iter().map(|e| e.targets()).collect();
        let target_len = target_seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut targets = vec![pad_id; examples.len() * target_len];
        for (b, e) in examples.iter().enumerate() {
            text[b * text_len..b * text_len + e.text.len()].copy_from_slice(&e.text);
            text_masks.push((0..text_len).map(|i| i < e.text.len()).collect());
            let t = &target_seqs[b];
            targets[b * target_len..b * target_len + t.len()].copy_from_slice(t);
        }
        let block = |get: fn(&MultimodalExample) -> Option<&Tensor>| -> Option<FeatureBlock> {
            let items: Option<Vec<&Tensor>> = examples.iter().map(|e| get(e)).collect();
            items.filter(|v| !v.is_empty()).map(|v| FeatureBlock::build(&v))
        };
        Self {
            pad_id,
            text,
            text_len,
            text_masks,
            audio: block(|e| e.audio.as_ref()),
            video: block(|e| e.video.as_ref()),
            targets,
            target_len,
            source_index: (0..examples.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.text_masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text_masks.is_empty()
    }

    /// Padded model input of example `b`.
    pub fn input(&self, b: usize) -> ModelInput {
        ModelInput {
            text: self.text[b * self.text_len..(b + 1) * self.text_len].to_vec(),
            text_mask: self.text_masks[b].clone(),
            audio: self.audio.as_ref().map(|a| a.example(b)),
            audio_mask: self.audio.as_ref().map_or(Vec::new(), |a| a.masks[b].clone()),
            video: self.video.as_ref().map(|v| v.example(b)),
            video_mask: self.video.as_ref().map_or(Vec::new(), |v| v.masks[b].clone()),
        }
    }

    pub fn targets(&self, b: usize) -> &[usize] {
        &self.targets[b * self.target_len..(b + 1) * self.target_len]
    }

    /// Number of non-pad target tokens in the batch.
    pub fn target_tokens(&self) -> usize {
        self.targets.iter().filter(|&&t| t != self.pad_id).count()
    }
}

/// Sorts by descending text length (stable) and chunks into batches.
pub fn batchify(examples: &[MultimodalExample], batch_size: usize, pad_id: usize) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| examples[b].text.len().cmp(&examples[a].text.len()));
    order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&MultimodalExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let mut batch = Batch::from_examples(&refs, pad_id);
            batch.source_index = chunk.to_vec();
            batch
        })
        .collect()
}
