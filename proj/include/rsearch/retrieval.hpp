#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "rsearch/protocol.hpp"

namespace rsearch::retrieval {

struct Document {
  std::string id;
  std::string title;
  std::string text;
  double score = 0.0;
};

struct CorpusRecord {
  std::string id;
  std::string title;
  std::string contents;
};

enum class RetrievalErrorKind { Network, HttpStatus, SchemaViolation };

class RetrievalError : public std::runtime_error {
 public:
  RetrievalError(RetrievalErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  RetrievalErrorKind kind() const { return kind_; }

 private:
  RetrievalErrorKind kind_;
};

/// Lowercased alphanumeric word tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// Corpus file: JSON-lines with fields id, title, contents.
inline std::vector<CorpusRecord> load_corpus_jsonl(std::istream& in) {
  std::vector<CorpusRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    if (!j.contains("id") || !j.contains("title") || !j.contains("contents"))
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": missing id/title/contents");
    CorpusRecord rec{j["id"].get<std::string>(), j["title"].get<std::string>(),
                     j["contents"].get<std::string>()};
    if (rec.contents.empty())
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": empty contents");
    if (!seen.insert(rec.id).second)
      throw std::runtime_error("corpus: duplicate id \"" + rec.id + "\"");
    records.push_back(std::move(rec));
  }
  return records;
}

/// Immutable BM25 index (k1=1.2, b=0.75) over title+contents tokens.
class Bm25Index {
 public:
  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;

  static Bm25Index build(const std::vector<CorpusRecord>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("bm25: empty corpus");
    Bm25Index index;
    std::unordered_set<std::string> seen;
    index.docs_.reserve(corpus.size());
    double total_len = 0.0;
    for (const auto& rec : corpus) {
      if (!seen.insert(rec.id).second)
        throw std::invalid_argument("bm25: duplicate id \"" + rec.id + "\"");
      auto tokens = tokenize(rec.title + " " + rec.contents);
      DocEntry entry;
      entry.id = rec.id;
      entry.title = rec.title;
      entry.text = rec.contents;
      entry.length = tokens.size();
      total_len += static_cast<double>(tokens.size());
      std::unordered_map<std::string, int> tf;
      for (const auto& tok : tokens) ++tf[tok];
      std::size_t doc_idx = index.docs_.size();
      for (const auto& [term, count] : tf)
        index.postings_[term].push_back({doc_idx, count});
      index.docs_.push_back(std::move(entry));
    }
    index.avg_doc_len_ = total_len / static_cast<double>(index.docs_.size());
    return index;
  }

  std::size_t size() const { return docs_.size(); }

  std::size_t document_frequency(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
  }

  /// Top-k by BM25 score, descending; ties broken by ascending id. Only
  /// documents with positive score are returned; empty query -> empty.
  std::vector<Document> search(const std::string& query, std::size_t k) const {
    std::vector<Document> results;
    auto terms = tokenize(query);
    if (terms.empty() || k == 0) return results;

    const double n = static_cast<double>(docs_.size());
    std::unordered_map<std::size_t, double> scores;
    std::unordered_map<std::string, int> query_tf;
    for (const auto& term : terms) ++query_tf[term];
    for (const auto& [term, qcount] : query_tf) {
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      double df = static_cast<double>(it->second.size());
      double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
      for (const auto& [doc_idx, tf] : it->second) {
        double dl = static_cast<double>(docs_[doc_idx].length);
        double denom = tf + kK1 * (1.0 - kB + kB * dl / avg_doc_len_);
        scores[doc_idx] += qcount * idf * tf * (kK1 + 1.0) / denom;
      }
    }

    for (const auto& [doc_idx, score] : scores) {
      if (score <= 0.0) continue;
      const auto& doc = docs_[doc_idx];
      results.push_back({doc.id, doc.title, doc.text, score});
    }
    std::sort(results.begin(), results.end(),
              [](const Document& a, const Document& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.id < b.id;
              });
    if (results.size() > k) results.resize(k);
    return results;
  }

 private:
  struct DocEntry {
    std::string id;
    std::string title;
    std::string text;
    std::size_t length = 0;
  };
  struct Posting {
    std::size_t doc_idx;
    int term_freq;
  };

  std::vector<DocEntry> docs_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  double avg_doc_len_ = 0.0;
};

inline constexpr std::string_view kIndexFormat = "rsearch-bm25-index";

/// Persisted index: validated records plus parameters. The posting lists
/// rebuild deterministically on load.
inline void save_index(std::ostream& out,
                       const std::vector<CorpusRecord>& records) {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& rec : records)
    docs.push_back(
        {{"id", rec.id}, {"title", rec.title}, {"contents", rec.contents}});
  out << nlohmann::json{{"format", kIndexFormat},
                        {"k1", Bm25Index::kK1},
                        {"b", Bm25Index::kB},
                        {"documents", docs}}
             .dump()
      << "\n";
}

/// Loads either a persisted index file or a raw corpus JSONL.
inline std::vector<CorpusRecord> load_index_or_corpus(std::istream& in) {
  std::string first;
  if (!std::getline(in, first)) throw std::runtime_error("corpus: empty file");
  nlohmann::json j;
  bool is_index = false;
  try {
    j = nlohmann::json::parse(first);
    is_index = j.is_object() && j.value("format", "") == kIndexFormat;
  } catch (const nlohmann::json::exception&) {
    is_index = false;
  }
  if (is_index) {
    std::vector<CorpusRecord> records;
    for (const auto& d : j.at("documents"))
      records.push_back({d.at("id").get<std::string>(),
                         d.at("title").get<std::string>(),
                         d.at("contents").get<std::string>()});
    return records;
  }
  std::stringstream rest;
  rest << first << "\n" << in.rdbuf();
  return load_corpus_jsonl(rest);
}

/// Wire protocol: POST {endpoint}/retrieve with {"query","top_k"},
/// response {"documents":[{id,title,text,score}]}.
inline std::vector<Document> remote_retrieve(const std::string& endpoint,
                                             const std::string& query,
                                             std::size_t k,
                                             int timeout_sec = 30) {
  httplib::Client client(endpoint);
  client.set_connection_timeout(timeout_sec);
  client.set_read_timeout(timeout_sec);
  nlohmann::json body{{"query", query}, {"top_k", static_cast<long>(k)}};
  auto res = client.Post("/retrieve", body.dump(), "application/json");
  if (!res)
    throw RetrievalError(RetrievalErrorKind::Network,
                         "retriever unreachable: " +
                             httplib::to_string(res.error()));
  if (res->status != 200)
    throw RetrievalError(RetrievalErrorKind::HttpStatus,
                         "retriever status " + std::to_string(res->status));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw RetrievalError(RetrievalErrorKind::SchemaViolation,
                         std::string("retriever bad json: ") + e.what());
  }
  if (!j.contains("documents") || !j["documents"].is_array())
    throw RetrievalError(RetrievalErrorKind::SchemaViolation,
                         "retriever response missing documents array");
  std::vector<Document> docs;
  for (const auto& d : j["documents"]) {
    if (!d.contains("id") || !d.contains("title") || !d.contains("text") ||
        !d.contains("score") || !d["score"].is_number())
      throw RetrievalError(RetrievalErrorKind::SchemaViolation,
                           "retriever document missing id/title/text/score");
    docs.push_back({d["id"].get<std::string>(), d["title"].get<std::string>(),
                    d["text"].get<std::string>(), d["score"].get<double>()});
  }
  return docs;
}

namespace detail {

inline void strip_all(std::string& text, std::string_view needle) {
  std::size_t p;
  while ((p = text.find(needle)) != std::string::npos)
    text.erase(p, needle.size());
}

}  // namespace detail

/// Renders retrieved documents into one observation block:
/// <observation>(Title: "...") text\n ... </observation>
/// Observation tag literals inside document fields are stripped so the
/// block always re-parses as a single Observation segment.
inline std::string render_observation(const std::vector<Document>& docs) {
  std::string out{protocol::kObservationOpen};
  for (const auto& doc : docs) {
    std::string title = doc.title;
    std::string text = doc.text;
    detail::strip_all(title, protocol::kObservationOpen);
    detail::strip_all(title, protocol::kObservationClose);
    detail::strip_all(text, protocol::kObservationOpen);
    detail::strip_all(text, protocol::kObservationClose);
    out += "(Title: \"";
    out += title;
    out += "\") ";
    out += text;
    out += "\n";
  }
  out += protocol::kObservationClose;
  return out;
}

}  // namespace rsearch::retrieval
