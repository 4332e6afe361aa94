#include "tarec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tarec/error.hpp"

namespace tarec {

namespace fs = std::filesystem;
using nlohmann::json;

ItemIndex ItemCorpus::add(const std::string& id, std::int64_t count) {
  auto it = index_.find(id);
  if (it != index_.end()) {
    counts_[it->second] += count;
    return it->second;
  }
  const auto idx = static_cast<ItemIndex>(ids_.size());
  ids_.push_back(id);
  counts_.push_back(count);
  index_.emplace(id, idx);
  return idx;
}

ItemIndex ItemCorpus::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw IndexError("unknown item id '" + id + "'");
  return it->second;
}

const std::string& ItemCorpus::id_of(ItemIndex index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= ids_.size()) {
    throw IndexError("item index " + std::to_string(index) + " out of range");
  }
  return ids_[static_cast<std::size_t>(index)];
}

std::int64_t ItemCorpus::popularity(ItemIndex index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= counts_.size()) {
    throw IndexError("item index " + std::to_string(index) + " has no popularity");
  }
  return counts_[static_cast<std::size_t>(index)];
}

std::vector<Interaction> parse_tsv(const std::string& text) {
  std::vector<Interaction> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;

    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t1 == std::string_view::npos || t2 == std::string_view::npos ||
        line.find('\t', t2 + 1) != std::string_view::npos) {
      throw ParseError(line_no, "expected 3 tab-separated fields");
    }
    const auto user = line.substr(0, t1);
    const auto item = line.substr(t1 + 1, t2 - t1 - 1);
    const auto ts = line.substr(t2 + 1);
    if (user.empty() || item.empty()) throw ParseError(line_no, "empty user or item field");
    std::int64_t stamp = 0;
    auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), stamp);
    if (ec != std::errc() || ptr != ts.data() + ts.size() || ts.empty()) {
      throw ParseError(line_no, "malformed timestamp '" + std::string(ts) + "'");
    }
    out.push_back({std::string(user), std::string(item), stamp});
  }
  return out;
}

std::vector<Interaction> ingest_tsv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open input file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_tsv(buf.str());
}

FilterResult filter_and_build(const std::vector<Interaction>& raw, int min_item_count,
                              int min_seq_len) {
  if (min_item_count < 1 || min_seq_len < 1) {
    throw ContractViolation("min_item_count and min_seq_len must be >= 1");
  }
  std::vector<bool> alive(raw.size(), true);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, int> item_count;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (alive[i]) ++item_count[raw[i].item];
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (alive[i] && item_count[raw[i].item] < min_item_count) {
        alive[i] = false;
        changed = true;
      }
    }
    std::unordered_map<std::string, int> user_len;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (alive[i]) ++user_len[raw[i].user];
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (alive[i] && user_len[raw[i].user] < min_seq_len) {
        alive[i] = false;
        changed = true;
      }
    }
  }

  FilterResult result;
  std::unordered_map<std::string, std::size_t> user_slot;
  std::vector<std::vector<std::size_t>> rows_by_user;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!alive[i]) continue;
    result.corpus.add(raw[i].item);
    auto [it, fresh] = user_slot.emplace(raw[i].user, rows_by_user.size());
    if (fresh) {
      rows_by_user.emplace_back();
      result.histories.push_back({raw[i].user, {}, {}});
    }
    rows_by_user[it->second].push_back(i);
  }
  if (result.corpus.size() == 0) throw DataError("empty corpus: every interaction was filtered out");

  for (std::size_t u = 0; u < rows_by_user.size(); ++u) {
    auto& rows = rows_by_user[u];
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return raw[a].timestamp < raw[b].timestamp;
    });
    auto& h = result.histories[u];
    for (std::size_t r : rows) {
      h.items.push_back(result.corpus.index_of(raw[r].item));
      h.timestamps.push_back(raw[r].timestamp);
    }
  }
  return result;
}

std::vector<SequenceExample> window_and_pad(const std::vector<ItemIndex>& history, int L,
                                            int min_seq_len, ItemIndex pad) {
  UserHistory h;
  h.items = history;
  h.timestamps.resize(history.size());
  for (std::size_t i = 0; i < history.size(); ++i) h.timestamps[i] = static_cast<std::int64_t>(i);
  return window_and_pad(h, L, min_seq_len, pad);
}

std::vector<SequenceExample> window_and_pad(const UserHistory& history, int L, int min_seq_len,
                                            ItemIndex pad) {
  if (L < 1 || min_seq_len < 1) throw ContractViolation("L and min_seq_len must be >= 1");
  std::vector<SequenceExample> out;
  const auto n_items = static_cast<int>(history.items.size());
  for (int n = min_seq_len - 1; n < n_items; ++n) {
    SequenceExample ex;
    ex.history.assign(static_cast<std::size_t>(L), pad);
    const int take = std::min(n, L);
    for (int k = 0; k < take; ++k) {
      ex.history[static_cast<std::size_t>(L - take + k)] =
          history.items[static_cast<std::size_t>(n - take + k)];
    }
    ex.target = history.items[static_cast<std::size_t>(n)];
    ex.timestamp = history.timestamps[static_cast<std::size_t>(n)];
    ex.user = history.user;
    out.push_back(std::move(ex));
  }
  return out;
}

DatasetSplit chronological_split(std::vector<SequenceExample> examples) {
  const std::size_t n = examples.size();
  if (n < 10) {
    throw DataError("split too small: " + std::to_string(n) + " examples, need at least 10");
  }
  std::stable_sort(examples.begin(), examples.end(),
                   [](const SequenceExample& a, const SequenceExample& b) {
                     return a.timestamp < b.timestamp;
                   });
  const std::size_t n_valid = n / 10;
  const std::size_t n_test = n / 10;
  const std::size_t n_train = n - n_valid - n_test;
  DatasetSplit split;
  auto first = std::make_move_iterator(examples.begin());
  split.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
  split.valid.assign(first + static_cast<std::ptrdiff_t>(n_train),
                     first + static_cast<std::ptrdiff_t>(n_train + n_valid));
  split.test.assign(first + static_cast<std::ptrdiff_t>(n_train + n_valid),
                    std::make_move_iterator(examples.end()));
  return split;
}

namespace {

void write_examples(const fs::path& path, const std::vector<SequenceExample>& examples,
                    const ItemCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& ex : examples) {
    out << ex.user << '\t' << corpus.id_of(ex.target) << '\t' << ex.timestamp << '\t';
    bool first = true;
    for (ItemIndex i : ex.history) {
      if (i == corpus.pad_index()) continue;
      if (!first) out << ' ';
      out << corpus.id_of(i);
      first = false;
    }
    out << '\n';
  }
}

std::vector<SequenceExample> read_examples(const fs::path& path, const ItemCorpus& corpus, int L) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<SequenceExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      auto tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() != 4) throw ParseError(line_no, path.filename().string() + ": expected 4 fields");
    SequenceExample ex;
    ex.user = fields[0];
    ex.target = corpus.index_of(fields[1]);
    auto [ptr, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), ex.timestamp);
    if (ec != std::errc()) throw ParseError(line_no, "malformed timestamp");
    std::vector<ItemIndex> items;
    std::istringstream hs(fields[3]);
    std::string id;
    while (hs >> id) items.push_back(corpus.index_of(id));
    if (static_cast<int>(items.size()) > L) throw ParseError(line_no, "history longer than L");
    ex.history.assign(static_cast<std::size_t>(L - static_cast<int>(items.size())), corpus.pad_index());
    ex.history.insert(ex.history.end(), items.begin(), items.end());
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

void write_prepared(const fs::path& dir, const PreparedData& data, int min_item_count,
                    int min_seq_len, const std::string& manifest_extra) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "corpus.tsv", std::ios::binary);
    if (!out) throw DataError("cannot write corpus.tsv in " + dir.string());
    for (std::size_t i = 0; i < data.corpus.size(); ++i) {
      out << data.corpus.ids()[i] << '\t' << data.corpus.popularity()[i] << '\n';
    }
  }
  write_examples(dir / "train.tsv", data.split.train, data.corpus);
  write_examples(dir / "valid.tsv", data.split.valid, data.corpus);
  write_examples(dir / "test.tsv", data.split.test, data.corpus);

  json manifest = manifest_extra.empty() ? json::object() : json::parse(manifest_extra);
  manifest["num_items"] = data.corpus.size();
  manifest["seq_len"] = data.seq_len;
  manifest["min_item_count"] = min_item_count;
  manifest["min_seq_len"] = min_seq_len;
  manifest["counts"] = {{"train", data.split.train.size()},
                        {"valid", data.split.valid.size()},
                        {"test", data.split.test.size()}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
}

PreparedData read_prepared(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw DataError("prepared split not found: " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw DataError("bad manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  PreparedData data;
  data.seq_len = manifest.at("seq_len").get<int>();

  std::ifstream cf(dir / "corpus.tsv");
  if (!cf) throw DataError("missing corpus.tsv in " + dir.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(cf, line)) {
    ++line_no;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(line_no, "corpus.tsv: expected 2 fields");
    data.corpus.add(line.substr(0, tab), std::stoll(line.substr(tab + 1)));
  }
  data.split.train = read_examples(dir / "train.tsv", data.corpus, data.seq_len);
  data.split.valid = read_examples(dir / "valid.tsv", data.corpus, data.seq_len);
  data.split.test = read_examples(dir / "test.tsv", data.corpus, data.seq_len);
  return data;
}

}  // namespace tarec
