#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace tarec {

using ItemIndex = std::int32_t;

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Dense item vocabulary. Indices are [0, V); `pad_index()` == V is reserved
/// for padding and never carries a popularity count.
class ItemCorpus {
 public:
  ItemCorpus() = default;

  /// Registers `id` if new and bumps its count. Returns its index.
  ItemIndex add(const std::string& id, std::int64_t count = 1);

  std::size_t size() const noexcept { return ids_.size(); }
  ItemIndex pad_index() const noexcept { return static_cast<ItemIndex>(ids_.size()); }

  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  ItemIndex index_of(const std::string& id) const;
  const std::string& id_of(ItemIndex index) const;
  std::int64_t popularity(ItemIndex index) const;
  const std::vector<std::int64_t>& popularity() const noexcept { return counts_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  friend bool operator==(const ItemCorpus& a, const ItemCorpus& b) {
    return a.ids_ == b.ids_ && a.counts_ == b.counts_;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, ItemIndex> index_;
};

/// One user's chronologically ordered, filtered interactions.
struct UserHistory {
  std::string user;
  std::vector<ItemIndex> items;
  std::vector<std::int64_t> timestamps;
};

struct SequenceExample {
  std::vector<ItemIndex> history;  // exactly L entries, left-padded
  ItemIndex target = 0;
  std::int64_t timestamp = 0;  // timestamp of the target interaction
  std::string user;

  friend bool operator==(const SequenceExample&, const SequenceExample&) = default;
};

struct DatasetSplit {
  std::vector<SequenceExample> train;
  std::vector<SequenceExample> valid;
  std::vector<SequenceExample> test;
};

struct FilterResult {
  ItemCorpus corpus;
  std::vector<UserHistory> histories;
};

/// Reads `user<TAB>item<TAB>timestamp` lines. No filtering; file order kept.
std::vector<Interaction> ingest_tsv(const std::filesystem::path& path);
std::vector<Interaction> parse_tsv(const std::string& text);

/// Alternates item-count and sequence-length filtering until neither removes
/// anything. Throws DataError("empty corpus") if nothing survives.
FilterResult filter_and_build(const std::vector<Interaction>& raw, int min_item_count = 5,
                              int min_seq_len = 3);

/// One example per target position n >= min_seq_len - 1, holding the previous
/// min(n, L) items left-padded with `pad` to length L.
std::vector<SequenceExample> window_and_pad(const std::vector<ItemIndex>& history, int L,
                                            int min_seq_len, ItemIndex pad);
std::vector<SequenceExample> window_and_pad(const UserHistory& history, int L, int min_seq_len,
                                            ItemIndex pad);

/// Sorts by target timestamp (stable) and cuts 8:1:1; valid and test get
/// floor(n/10) each, the remainder goes to train.
DatasetSplit chronological_split(std::vector<SequenceExample> examples);

struct PreparedData {
  ItemCorpus corpus;
  DatasetSplit split;
  int seq_len = 10;
};

/// Writes train/valid/test.tsv, corpus.tsv and manifest.json under `dir`.
/// `manifest_extra` (JSON object text, may be empty) is merged into the manifest.
void write_prepared(const std::filesystem::path& dir, const PreparedData& data, int min_item_count,
                    int min_seq_len, const std::string& manifest_extra = {});
PreparedData read_prepared(const std::filesystem::path& dir);

}  // namespace tarec
