#pragma once

#include "contconv/config.hpp"
#include "contconv/datagen.hpp"
#include "contconv/models.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace contconv {

enum class DataKind { Segmentation, Flow, Classify };

std::string data_kind_name(DataKind k);
DataKind data_kind_for(Task t);

/// One cloud, or one frame pair for flow (source carries the flow channel).
struct DatasetEntry {
  PointFile source;
  PointFile target;
};

/// A directory holding `dataset.txt` and one file per cloud:
///   cloud_NNNNN.{pcn,pcb}            segmentation / classify
///   pair_NNNNN_{source,target}.{...} flow
struct Dataset {
  DataKind kind = DataKind::Segmentation;
  std::vector<DatasetEntry> entries;

  /// Feature channels the network sees: stored features, a constant channel
  /// when none are stored, or the two frame indicators for flow.
  Index input_dim() const;
  /// 1 + largest label; 0 for flow.
  Index num_classes() const;
};

void write_dataset(const std::string& dir, const Dataset& data, bool binary);
Dataset load_dataset(const std::string& dir);

/// Deterministic generation: cloud i of a split is drawn from
/// splitmix64(splitmix64(seed ^ split_tag) + i).
std::uint64_t splitmix64(std::uint64_t x);
Dataset generate_split(const GenSpec& spec, std::uint64_t seed, int count, std::uint64_t split_tag);
/// Writes <out>/train and <out>/test.
void generate_dataset(const GenSpec& spec, std::uint64_t seed, const std::string& out);

Sample<float> make_sample(const NetworkSpec& spec, DataKind kind, const DatasetEntry& e, int threads);
std::vector<Sample<float>> make_samples(const NetworkSpec& spec, const Dataset& data, int threads);

}  // namespace contconv
