/** Typed client for the identity service's bridge endpoints. All JSON. */

export interface Attribute {
  readonly name: string;
  readonly version: number;
  readonly value: string;
}

export interface TicketInfo {
  readonly rnd: string;
  readonly rp: string;
  readonly names: string[];
}

export interface PendingRequest {
  readonly request_id: string;
  readonly client_id: string;
  readonly scope_names: string[];
  readonly redirect_uri: string;
  readonly state: string;
  readonly created: number;
}

export interface AttributeListing {
  readonly attributes: Attribute[];
  readonly tombstones: Record<string, number>;
}

export class ServiceUnreachable extends Error {
  constructor(cause: unknown) {
    super(`identity service unreachable: ${cause}`);
  }
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly body: { error?: string }) {
    super(body.error ?? `request failed with status ${status}`);
  }
}

export class ServiceClient {
  constructor(readonly base: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.base + path, init);
    } catch (err) {
      throw new ServiceUnreachable(err);
    }
    const body = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, body);
    }
    return body as T;
  }

  async attributes(): Promise<AttributeListing> {
    return this.request<AttributeListing>('/attributes');
  }

  async storeAttribute(name: string, value: string): Promise<void> {
    await this.request('/attributes', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ name, value }),
    });
  }

  async deleteAttribute(name: string): Promise<void> {
    await this.request(`/attributes/${encodeURIComponent(name)}`, { method: 'DELETE' });
  }

  async tickets(): Promise<TicketInfo[]> {
    const body = await this.request<{ tickets: TicketInfo[] }>('/tickets');
    return body.tickets;
  }

  async revokeTicket(rnd: string): Promise<void> {
    await this.request(`/tickets/${encodeURIComponent(rnd)}/revoke`, { method: 'POST' });
  }

  async pendingConsents(): Promise<PendingRequest[]> {
    const body = await this.request<{ pending: PendingRequest[] }>('/consent/pending');
    return body.pending;
  }

  /** Approve a subset of the requested names, or deny outright.
      Returns the redirect URL the user agent must follow. */
  async decide(requestId: string, approvedNames: string[] | null): Promise<string> {
    const payload =
      approvedNames === null
        ? { request_id: requestId, deny: true }
        : { request_id: requestId, approved_names: approvedNames };
    const body = await this.request<{ redirect: string }>('/consent/decision', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    });
    return body.redirect;
  }
}
