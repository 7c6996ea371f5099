#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amcl/tensor.hpp"

namespace amcl {

/// Examples with integer class labels in [0, num_classes).
struct LabeledDataset {
  Shape example_shape;
  std::vector<double> features;  // size() * example_size() values, row-major
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t example_size() const noexcept { return shape_size(example_shape); }
  std::span<const double> example(std::size_t i) const;
  /// Stacks the selected examples into [n] + example_shape.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;
  std::uint64_t checksum() const noexcept;
  void validate() const;
};

enum class DatasetKind { gaussian_blobs, synthetic_images, idx_files, cifar_binary };
enum class Split { train, test };

const char* dataset_kind_name(DatasetKind kind) noexcept;

/// Parsed form of a dataset description string:
///
///   blobs:classes=4,dim=8,train=200,test=200,sep=6,noise=1,seed=1
///   images:classes=2,size=16,train=100,test=100,noise=0.15,seed=1
///   idx:images=train-images.idx3-ubyte,labels=train-labels.idx1-ubyte
///   cifar:files=data_batch_1.bin+data_batch_2.bin,test_files=test_batch.bin,keep=0+5
///
/// `keep=a+b+...` restricts any kind to a class subset and remaps the labels
/// to 0.. in ascending class order. List values are separated by '+'.
struct DatasetSpec {
  DatasetKind kind = DatasetKind::gaussian_blobs;
  std::size_t num_classes = 2;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 200;
  std::size_t dim = 2;          // blobs
  std::size_t image_size = 16;  // synthetic images
  double separation = 6.0;      // blobs: pairwise centre distance in noise units
  double noise = 1.0;
  std::uint64_t seed = 1;
  std::vector<std::string> files;       // idx: {images, labels}; cifar: batch files
  std::vector<std::string> test_files;
  std::vector<int> keep;

  static DatasetSpec parse(std::string_view text);
  std::string to_string() const;
  void validate() const;
  bool synthetic() const noexcept {
    return kind == DatasetKind::gaussian_blobs || kind == DatasetKind::synthetic_images;
  }
};

/// Isotropic Gaussian clusters. With dim >= classes the centres sit on scaled
/// basis vectors (pairwise distance = separation * noise), re-centred at 0.
LabeledDataset generate_blobs(const DatasetSpec& spec, Split split = Split::train);

/// Single-channel size x size images, one bar orientation per class
/// (angle = pi * c / classes) with random offset, brightness and pixel noise.
LabeledDataset generate_synthetic_images(const DatasetSpec& spec, Split split = Split::train);

/// IDX pair (0x00000803 images, 0x00000801 labels), pixels scaled to [0, 1].
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

/// CIFAR-10 binary batches: 3073-byte records, label byte first, then
/// 3x32x32 planar RGB.
LabeledDataset load_cifar_binary(std::span<const std::string> paths);

/// Keeps the listed classes (any order) and remaps them to 0..k-1 in
/// ascending class order. Example order is preserved.
LabeledDataset filter_classes(const LabeledDataset& data, std::span<const int> keep);

LabeledDataset make_dataset(const DatasetSpec& spec, Split split);

}  // namespace amcl
